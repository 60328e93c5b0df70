//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each case wraps a layer and its inputs as [`Param`]s so input
//! gradients are checked the same way as weights. The scalar objective is
//! `Σ G ⊙ output` for a fixed random `G`, which feeds an arbitrary
//! upstream gradient into the backward pass.

use rand::Rng;
use serde::Serialize;

use crate::numerics::{rng_from_seed, Mat, SimRng};

use super::attention::{scaled_dot_attention, scaled_dot_attention_backward};
use super::transformer::{TransformerNet, TransformerShape};
use super::{
    mse_loss, sigmoid, sigmoid_backward, tanh, tanh_backward, Dense, FeedForward, LayerNorm, LstmStack,
    MultiHeadAttention, Param, Parameterized,
};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-4;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A differentiable scalar objective over its own parameters.
pub trait Checkable: Parameterized {
    fn objective(&self) -> f64;
    /// Accumulates `∂objective/∂p` into every parameter's gradient.
    fn accumulate_gradient(&mut self);
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub case: String,
    pub tensor: String,
    pub relative_error: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.relative_error < PASS_THRESHOLD
    }
}

/// Relative error per tensor of `model`.
pub fn check<M: Checkable>(case: &str, model: &mut M, step: f64) -> Vec<GradCheckResult> {
    model.zero_grad();
    model.accumulate_gradient();
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = model.params().into_iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    let mut out = Vec::with_capacity(names.len());
    for (idx, name) in names.into_iter().enumerate() {
        let len = analytic[idx].len();
        let mut numeric = vec![0.0; len];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params_mut()[idx].value.data()[e];
            model.params_mut()[idx].value.data_mut()[e] = orig + step;
            let plus = model.objective();
            model.params_mut()[idx].value.data_mut()[e] = orig - step;
            let minus = model.objective();
            model.params_mut()[idx].value.data_mut()[e] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        out.push(GradCheckResult { case: case.into(), tensor: name, relative_error: relative_error(&analytic[idx], &numeric) });
    }
    out
}

fn random(rows: usize, cols: usize, rng: &mut SimRng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn weighted(out: &Mat, g: &Mat) -> f64 {
    out.hadamard(g).sum()
}

struct DenseCase {
    layer: Dense,
    x: Param,
    g: Mat,
}

impl Parameterized for DenseCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.layer.named("dense");
        v.push(("input".into(), &self.x));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.all_mut();
        v.push(&mut self.x);
        v
    }
}

impl Checkable for DenseCase {
    fn objective(&self) -> f64 {
        weighted(&self.layer.forward(&self.x.value), &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let dx = self.layer.backward(&self.x.value, &self.g);
        self.x.grad += &dx;
    }
}

struct NormCase {
    layer: LayerNorm,
    x: Param,
    g: Mat,
}

impl Parameterized for NormCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.layer.named("layer_norm");
        v.push(("input".into(), &self.x));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.layer.gain, &mut self.layer.shift, &mut self.x]
    }
}

impl Checkable for NormCase {
    fn objective(&self) -> f64 {
        weighted(&self.layer.forward(&self.x.value).0, &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let (_, c) = self.layer.forward(&self.x.value);
        let dx = self.layer.backward(&c, &self.g);
        self.x.grad += &dx;
    }
}

#[derive(Clone, Copy)]
enum Activation {
    Sigmoid,
    Tanh,
}

struct ActivationCase {
    kind: Activation,
    x: Param,
    g: Mat,
}

impl ActivationCase {
    fn apply(&self) -> Mat {
        match self.kind {
            Activation::Sigmoid => sigmoid(&self.x.value),
            Activation::Tanh => tanh(&self.x.value),
        }
    }
}

impl Parameterized for ActivationCase {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("input".into(), &self.x)]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.x]
    }
}

impl Checkable for ActivationCase {
    fn objective(&self) -> f64 {
        weighted(&self.apply(), &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let y = self.apply();
        let dx = match self.kind {
            Activation::Sigmoid => sigmoid_backward(&y, &self.g),
            Activation::Tanh => tanh_backward(&y, &self.g),
        };
        self.x.grad += &dx;
    }
}

struct MseCase {
    pred: Param,
    target: Mat,
    weights: Vec<f64>,
}

impl Parameterized for MseCase {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("prediction".into(), &self.pred)]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.pred]
    }
}

impl Checkable for MseCase {
    fn objective(&self) -> f64 {
        mse_loss(&self.pred.value, &self.target, Some(&self.weights)).0
    }
    fn accumulate_gradient(&mut self) {
        let (_, g) = mse_loss(&self.pred.value, &self.target, Some(&self.weights));
        self.pred.grad += &g;
    }
}

struct AttentionCase {
    q: Param,
    k: Param,
    v: Param,
    g: Mat,
}

impl Parameterized for AttentionCase {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("query".into(), &self.q), ("key".into(), &self.k), ("value".into(), &self.v)]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.q, &mut self.k, &mut self.v]
    }
}

impl Checkable for AttentionCase {
    fn objective(&self) -> f64 {
        weighted(&scaled_dot_attention(&self.q.value, &self.k.value, &self.v.value).0, &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let (_, c) = scaled_dot_attention(&self.q.value, &self.k.value, &self.v.value);
        let (dq, dk, dv) = scaled_dot_attention_backward(&c, &self.g);
        self.q.grad += &dq;
        self.k.grad += &dk;
        self.v.grad += &dv;
    }
}

struct MhaCase {
    layer: MultiHeadAttention,
    x_q: Param,
    x_kv: Param,
    g: Mat,
}

impl Parameterized for MhaCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.layer.named("attention");
        v.push(("query_input".into(), &self.x_q));
        v.push(("memory_input".into(), &self.x_kv));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.all_mut();
        v.push(&mut self.x_q);
        v.push(&mut self.x_kv);
        v
    }
}

impl Checkable for MhaCase {
    fn objective(&self) -> f64 {
        weighted(&self.layer.forward(&self.x_q.value, &self.x_kv.value).0, &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let (_, c) = self.layer.forward(&self.x_q.value, &self.x_kv.value);
        let (dq, dkv) = self.layer.backward(&c, &self.g);
        self.x_q.grad += &dq;
        self.x_kv.grad += &dkv;
    }
}

struct FfnCase {
    layer: FeedForward,
    x: Param,
    g: Mat,
}

impl Parameterized for FfnCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.layer.named("ffn");
        v.push(("input".into(), &self.x));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.all_mut();
        v.push(&mut self.x);
        v
    }
}

impl Checkable for FfnCase {
    fn objective(&self) -> f64 {
        weighted(&self.layer.forward(&self.x.value).0, &self.g)
    }
    fn accumulate_gradient(&mut self) {
        let (_, c) = self.layer.forward(&self.x.value);
        let dx = self.layer.backward(&c, &self.g);
        self.x.grad += &dx;
    }
}

struct LstmCase {
    net: LstmStack,
    xs: Vec<Param>,
    target: Mat,
}

impl LstmCase {
    fn inputs(&self) -> Vec<Mat> {
        self.xs.iter().map(|p| p.value.clone()).collect()
    }
}

impl Parameterized for LstmCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.net.params();
        v.extend(self.xs.iter().enumerate().map(|(t, p)| (format!("input.{t}"), p)));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.net.params_mut();
        v.extend(self.xs.iter_mut());
        v
    }
}

impl Checkable for LstmCase {
    fn objective(&self) -> f64 {
        mse_loss(&self.net.predict(&self.inputs()), &self.target, None).0
    }
    fn accumulate_gradient(&mut self) {
        let (y, c) = self.net.forward(&self.inputs());
        let (_, g) = mse_loss(&y, &self.target, None);
        let dxs = self.net.backward(&c, &g);
        for (p, d) in self.xs.iter_mut().zip(&dxs) {
            p.grad += d;
        }
    }
}

struct TransformerCase {
    net: TransformerNet,
    x: Param,
    target: Mat,
    mask: Vec<f64>,
    dropout_seed: u64,
}

impl Parameterized for TransformerCase {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.net.params();
        v.push(("input".into(), &self.x));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.net.params_mut();
        v.push(&mut self.x);
        v
    }
}

impl Checkable for TransformerCase {
    fn objective(&self) -> f64 {
        // Same seed every call, so the dropout masks are frozen.
        let (y, _) = self.net.forward(&self.x.value, true, &mut rng_from_seed(self.dropout_seed));
        mse_loss(&y, &self.target, Some(&self.mask)).0
    }
    fn accumulate_gradient(&mut self) {
        let (y, c) = self.net.forward(&self.x.value, true, &mut rng_from_seed(self.dropout_seed));
        let (_, g) = mse_loss(&y, &self.target, Some(&self.mask));
        let dx = self.net.backward(&c, &g);
        self.x.grad += &dx;
    }
}

/// Runs every case with parameters drawn from `seed`.
pub fn run_all(seed: u64, step: f64) -> Vec<GradCheckResult> {
    let mut rng = rng_from_seed(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let mut c = DenseCase { layer: Dense::new(4, 3, r), x: Param::new(random(4, 5, r)), g: random(3, 5, r) };
    out.extend(check("dense", &mut c, step));

    let mut c = NormCase { layer: LayerNorm::new(6), x: Param::new(random(6, 4, r)), g: random(6, 4, r) };
    c.layer.gain = Param::new(random(6, 1, r));
    c.layer.shift = Param::new(random(6, 1, r));
    out.extend(check("layer_norm", &mut c, step));

    for (name, kind) in [("sigmoid", Activation::Sigmoid), ("tanh", Activation::Tanh)] {
        let mut c = ActivationCase { kind, x: Param::new(random(3, 4, r).scale(3.0)), g: random(3, 4, r) };
        out.extend(check(name, &mut c, step));
    }

    let mut c = MseCase {
        pred: Param::new(random(2, 6, r)),
        target: random(2, 6, r),
        weights: vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0],
    };
    out.extend(check("mse", &mut c, step));

    let mut c = AttentionCase {
        q: Param::new(random(4, 3, r)),
        k: Param::new(random(4, 5, r)),
        v: Param::new(random(2, 5, r)),
        g: random(2, 3, r),
    };
    out.extend(check("scaled_dot_attention", &mut c, step));

    let mut c = MhaCase {
        layer: MultiHeadAttention::new(6, 2, r),
        x_q: Param::new(random(6, 4, r)),
        x_kv: Param::new(random(6, 5, r)),
        g: random(6, 4, r),
    };
    out.extend(check("multi_head_attention", &mut c, step));

    let mut c = FfnCase { layer: FeedForward::new(4, 8, r), x: Param::new(random(4, 3, r)), g: random(4, 3, r) };
    out.extend(check("feed_forward", &mut c, step));

    let mut c = LstmCase {
        net: LstmStack::new(2, 4, 2, 1, r),
        xs: (0..4).map(|_| Param::new(random(2, 3, r))).collect(),
        target: random(1, 3, r),
    };
    out.extend(check("lstm", &mut c, step));

    let shape = TransformerShape { inputs: 1, model_dim: 8, heads: 2, layers: 2, ffn_hidden: 12, dropout: 0.1 };
    let mut c = TransformerCase {
        net: TransformerNet::new(shape, r),
        x: Param::new(random(1, 6, r)),
        target: random(1, 6, r),
        mask: vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
        dropout_seed: r.random(),
    };
    out.extend(check("transformer", &mut c, step));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_conventions() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn every_backward_pass_matches_finite_differences() {
        let results = run_all(11, DEFAULT_STEP);
        assert!(results.len() > 30);
        for r in &results {
            assert!(r.passed(), "{}/{}: {:e}", r.case, r.tensor, r.relative_error);
        }
    }

    #[test]
    fn a_broken_gradient_is_detected() {
        struct Wrong(Param);
        impl Parameterized for Wrong {
            fn params(&self) -> Vec<(String, &Param)> {
                vec![("x".into(), &self.0)]
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                vec![&mut self.0]
            }
        }
        impl Checkable for Wrong {
            fn objective(&self) -> f64 {
                self.0.value.data().iter().map(|v| v * v).sum()
            }
            fn accumulate_gradient(&mut self) {
                let g = self.0.value.clone();
                self.0.grad += &g;
            }
        }
        let mut w = Wrong(Param::new(Mat::from_rows(&[[1.0, -2.0]])));
        assert!(!check("wrong", &mut w, DEFAULT_STEP)[0].passed());
    }
}
