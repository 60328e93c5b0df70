//! Minimal trainable-layer toolkit with hand-written backward passes.
//!
//! Sequence items are matrix columns throughout: a sequence of `n` items
//! with `d` features is a `d × n` matrix. Every layer's `forward` returns
//! the output together with whatever its `backward` needs; `backward`
//! accumulates parameter gradients into [`Param::grad`] and returns the
//! gradient with respect to the layer input.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Mat, SimRng};

pub use attention::{scaled_dot_attention, AttentionCache, MultiHeadAttention};
pub use lstm::{LstmLayer, LstmStack};
pub use transformer::{TransformerNet, TransformerShape};

/// A trainable matrix with its gradient and Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
    adam_m: Mat,
    adam_v: Mat,
    step_count: u64,
}

impl Param {
    pub fn new(value: Mat) -> Param {
        let (r, c) = value.shape();
        Param { value, grad: Mat::zeros(r, c), adam_m: Mat::zeros(r, c), adam_v: Mat::zeros(r, c), step_count: 0 }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut SimRng) -> Param {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Param::new(Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound)))
    }

    pub fn constant(rows: usize, cols: usize, v: f64) -> Param {
        let mut m = Mat::zeros(rows, cols);
        m.fill(v);
        Param::new(m)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0) {
            return Err(format!("adam lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return Err("adam eps must be positive".into());
        }
        Ok(())
    }
}

/// One bias-corrected Adam update; clears the gradient afterwards.
pub fn adam_step(p: &mut Param, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let value = p.value.data_mut();
    let grad = p.grad.data_mut();
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        grad[i] = 0.0;
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params.iter().map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Anything that owns trainable parameters, in a stable order.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in self.params_mut() {
            adam_step(p, cfg);
        }
    }
}

/// Inverted dropout. Returns the output and the scaled keep-mask (`None`
/// when the layer is the identity).
///
/// Panics when `rate` is outside `[0, 1)`.
pub fn dropout_with_mask(x: &Mat, rate: f64, training: bool, rng: &mut SimRng) -> (Mat, Option<Mat>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1), got {rate}");
    if !training || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Mat::from_fn(x.rows(), x.cols(), |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
    (x.hadamard(&mask), Some(mask))
}

pub fn dropout(x: &Mat, rate: f64, training: bool, rng: &mut SimRng) -> Mat {
    dropout_with_mask(x, rate, training, rng).0
}

pub fn dropout_backward(grad: &Mat, mask: &Option<Mat>) -> Mat {
    match mask {
        Some(m) => grad.hadamard(m),
        None => grad.clone(),
    }
}

pub fn sigmoid(x: &Mat) -> Mat {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Backward of sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Mat, grad: &Mat) -> Mat {
    y.zip_map(grad, |s, g| g * s * (1.0 - s))
}

pub fn tanh(x: &Mat) -> Mat {
    x.map(f64::tanh)
}

/// Backward of tanh given its output `y`.
pub fn tanh_backward(y: &Mat, grad: &Mat) -> Mat {
    y.zip_map(grad, |t, g| g * (1.0 - t * t))
}

pub fn relu(x: &Mat) -> Mat {
    x.map(|v| v.max(0.0))
}

/// Backward of ReLU given its input `x`.
pub fn relu_backward(x: &Mat, grad: &Mat) -> Mat {
    x.zip_map(grad, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Mean squared error over the columns selected by `column_weights`
/// (all columns when `None`). Returns the loss and `∂loss/∂pred`.
pub fn mse_loss(pred: &Mat, target: &Mat, column_weights: Option<&[f64]>) -> (f64, Mat) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch: {:?} vs {:?}", pred.shape(), target.shape());
    let (r, c) = pred.shape();
    let w = |j: usize| column_weights.map_or(1.0, |w| w[j]);
    if let Some(cw) = column_weights {
        assert_eq!(cw.len(), c, "column weights length {} vs {} columns", cw.len(), c);
    }
    let total: f64 = (0..c).map(w).sum::<f64>() * r as f64;
    assert!(total > 0.0, "mse over an empty selection");
    let mut loss = 0.0;
    let mut grad = Mat::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let d = pred[(i, j)] - target[(i, j)];
            loss += w(j) * d * d;
            grad[(i, j)] = 2.0 * w(j) * d / total;
        }
    }
    (loss / total, grad)
}

/// Sinusoidal position feature: `sin(i / 10000^(2λ/d))` in slot `2λ`,
/// `cos` of the same angle in slot `2λ + 1`.
pub fn positional_encoding(position: usize, slot: usize, model_dim: usize) -> f64 {
    assert!(slot < model_dim, "slot {slot} outside model dimension {model_dim}");
    let lambda = slot / 2;
    let angle = position as f64 / 10000f64.powf(2.0 * lambda as f64 / model_dim as f64);
    if slot.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// `d × n` matrix of positional features for positions `0..n`.
pub fn positional_encoding_matrix(model_dim: usize, n: usize) -> Mat {
    Mat::from_fn(model_dim, n, |slot, pos| positional_encoding(pos, slot, model_dim))
}

/// Affine layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut SimRng) -> Dense {
        Dense { weight: Param::uniform(outputs, inputs, inputs, rng), bias: Param::uniform(outputs, 1, inputs, rng) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = self.weight.value.matmul(x);
        let b = self.bias.value.data();
        let n = y.cols();
        for (i, chunk) in y.data_mut().chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[i]);
        }
        y
    }

    pub fn backward(&mut self, x: &Mat, grad: &Mat) -> Mat {
        self.weight.grad += &grad.matmul_t(x);
        let n = grad.cols();
        for (i, chunk) in grad.data().chunks(n).enumerate() {
            self.bias.grad.data_mut()[i] += chunk.iter().sum::<f64>();
        }
        self.weight.value.t_matmul(grad)
    }

    fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Param)> {
        vec![(format!("{prefix}.weight"), &self.weight), (format!("{prefix}.bias"), &self.bias)]
    }

    fn all_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<(String, &Param)> {
        self.named("dense")
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.all_mut()
    }
}

/// Per-column layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub shift: Param,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm { gain: Param::constant(dim, 1, 1.0), shift: Param::constant(dim, 1, 0.0), eps: 1e-5 }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let (d, n) = x.shape();
        let mut normalized = Mat::zeros(d, n);
        let mut inv_std = Vec::with_capacity(n);
        for j in 0..n {
            let mean = (0..d).map(|i| x[(i, j)]).sum::<f64>() / d as f64;
            let var = (0..d).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + self.eps).sqrt();
            for i in 0..d {
                normalized[(i, j)] = (x[(i, j)] - mean) * s;
            }
            inv_std.push(s);
        }
        let g = self.gain.value.data();
        let b = self.shift.value.data();
        let y = Mat::from_fn(d, n, |i, j| g[i] * normalized[(i, j)] + b[i]);
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, grad: &Mat) -> Mat {
        let (d, n) = grad.shape();
        let xh = &cache.normalized;
        for i in 0..d {
            let mut dg = 0.0;
            let mut db = 0.0;
            for j in 0..n {
                dg += grad[(i, j)] * xh[(i, j)];
                db += grad[(i, j)];
            }
            self.gain.grad.data_mut()[i] += dg;
            self.shift.grad.data_mut()[i] += db;
        }
        let g = self.gain.value.data();
        let mut dx = Mat::zeros(d, n);
        for j in 0..n {
            let dxh: Vec<f64> = (0..d).map(|i| grad[(i, j)] * g[i]).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
            let mean_dxh_xh = (0..d).map(|i| dxh[i] * xh[(i, j)]).sum::<f64>() / d as f64;
            for i in 0..d {
                dx[(i, j)] = cache.inv_std[j] * (dxh[i] - mean_dxh - xh[(i, j)] * mean_dxh_xh);
            }
        }
        dx
    }

    fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Param)> {
        vec![(format!("{prefix}.gain"), &self.gain), (format!("{prefix}.shift"), &self.shift)]
    }
}

impl Parameterized for LayerNorm {
    fn params(&self) -> Vec<(String, &Param)> {
        self.named("layer_norm")
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.shift]
    }
}

/// Position-wise `W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Dense,
    pub outer: Dense,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Mat,
    pre_activation: Mat,
    hidden: Mat,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut SimRng) -> FeedForward {
        FeedForward { inner: Dense::new(dim, hidden, rng), outer: Dense::new(hidden, dim, rng) }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, FeedForwardCache) {
        let pre = self.inner.forward(x);
        let hidden = relu(&pre);
        let y = self.outer.forward(&hidden);
        (y, FeedForwardCache { input: x.clone(), pre_activation: pre, hidden })
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, grad: &Mat) -> Mat {
        let dh = self.outer.backward(&cache.hidden, grad);
        let dpre = relu_backward(&cache.pre_activation, &dh);
        self.inner.backward(&cache.input, &dpre)
    }

    fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Param)> {
        let mut v = self.inner.named(&format!("{prefix}.inner"));
        v.extend(self.outer.named(&format!("{prefix}.outer")));
        v
    }

    fn all_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.inner.all_mut();
        v.extend(self.outer.all_mut());
        v
    }
}

impl Parameterized for FeedForward {
    fn params(&self) -> Vec<(String, &Param)> {
        self.named("ffn")
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.all_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = Param::new(Mat::from_rows(&[[0.3, -1.2]]));
        let before = p.value.clone();
        adam_step(&mut p, &AdamConfig::default());
        assert_eq!(p.value, before);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Param::new(Mat::from_rows(&[[2.0]]));
        p.grad = Mat::from_rows(&[[1.0]]);
        adam_step(&mut p, &AdamConfig::default());
        assert!((p.value[(0, 0)] - 1.9).abs() < 1e-6);
        assert_eq!(p.grad, Mat::zeros(1, 1));
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = Param::new(Mat::from_rows(&[[0.5, 0.25]]));
        let mut b = a.clone();
        for step in 0..5 {
            let g = Mat::from_rows(&[[step as f64 - 2.0, 0.1]]);
            a.grad = g.clone();
            b.grad = g;
            adam_step(&mut a, &AdamConfig::default());
            adam_step(&mut b, &AdamConfig::default());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut rng = rng_from_seed(0);
        let x = Mat::from_fn(4, 7, |i, j| (i * 7 + j) as f64 - 10.0);
        assert_eq!(dropout(&x, 0.5, false, &mut rng), x);
        assert_eq!(dropout(&x, 0.0, true, &mut rng), x);
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = rng_from_seed(5);
        let x = Mat::from_fn(1, 100_000, |_, _| 1.0);
        let y = dropout(&x, 0.1, true, &mut rng);
        let mean = y.sum() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().contains(&0.0));
    }

    #[test]
    #[should_panic(expected = "dropout rate")]
    fn dropout_rejects_rate_one() {
        dropout(&Mat::zeros(1, 1), 1.0, true, &mut rng_from_seed(0));
    }

    #[test]
    fn positional_encoding_examples() {
        for d in [4, 8, 32] {
            for slot in 0..d {
                let expected = if slot % 2 == 0 { 0.0 } else { 1.0 };
                assert_eq!(positional_encoding(0, slot, d), expected);
            }
            assert!((positional_encoding(1, 0, d) - 0.841471).abs() < 1e-6);
        }
        for i in 0..50 {
            for lam in 0..8 {
                let s = positional_encoding(i, 2 * lam, 16);
                let c = positional_encoding(i, 2 * lam + 1, 16);
                assert!((s * s + c * c - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mse_examples() {
        let p = Mat::from_rows(&[[1.0, 2.0]]);
        let t = Mat::from_rows(&[[0.0, 2.0]]);
        let (l, g) = mse_loss(&p, &t, None);
        assert_eq!(l, 0.5);
        assert_eq!(g, Mat::from_rows(&[[1.0, 0.0]]));
        let (l, _) = mse_loss(&p, &t, Some(&[0.0, 1.0]));
        assert_eq!(l, 0.0);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let ln = LayerNorm::new(5);
        let x = Mat::from_fn(5, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.3));
        let (y, _) = ln.forward(&x);
        for j in 0..3 {
            let col = y.col(j);
            let mean = col.iter().sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
