//! Scaled dot-product and multi-head attention.

use crate::numerics::{softmax_slice, Mat, SimRng};

use super::{Param, Parameterized};

/// Weights and inputs kept from [`scaled_dot_attention`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `n_k × n_q`; column `j` is the distribution over keys for query `j`.
    pub weights: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
}

/// `H = V · softmax(Kᵀ Q / √d)`, the softmax taken over each column.
///
/// `q` is `d × n_q`, `k` is `d × n_k`, `v` is `d_v × n_k`; the output is
/// `d_v × n_q`.
pub fn scaled_dot_attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, AttentionCache) {
    assert_eq!(q.rows(), k.rows(), "query dim {} vs key dim {}", q.rows(), k.rows());
    assert_eq!(k.cols(), v.cols(), "{} keys vs {} values", k.cols(), v.cols());
    let scale = 1.0 / (q.rows() as f64).sqrt();
    let scores = k.t_matmul(q).scale(scale);
    let mut weights = Mat::zeros(scores.rows(), scores.cols());
    for j in 0..scores.cols() {
        weights.set_col(j, &softmax_slice(scores.col(j).as_slice()));
    }
    let h = v.matmul(&weights);
    (h, AttentionCache { weights, q: q.clone(), k: k.clone(), v: v.clone() })
}

/// Returns `(∂Q, ∂K, ∂V)`.
pub fn scaled_dot_attention_backward(cache: &AttentionCache, grad: &Mat) -> (Mat, Mat, Mat) {
    let w = &cache.weights;
    let dv = grad.matmul_t(w);
    let dw = cache.v.t_matmul(grad);
    let mut ds = Mat::zeros(w.rows(), w.cols());
    for j in 0..w.cols() {
        let dot: f64 = (0..w.rows()).map(|i| w[(i, j)] * dw[(i, j)]).sum();
        for i in 0..w.rows() {
            ds[(i, j)] = w[(i, j)] * (dw[(i, j)] - dot);
        }
    }
    let scale = 1.0 / (cache.q.rows() as f64).sqrt();
    let dq = cache.k.matmul(&ds).scale(scale);
    let dk = cache.q.matmul_t(&ds).scale(scale);
    (dq, dk, dv)
}

/// Multi-head attention with per-head slices of shared projections and an
/// output projection `W_O`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    pub w_o: Param,
}

#[derive(Debug, Clone)]
pub struct MultiHeadCache {
    x_q: Mat,
    x_kv: Mat,
    concat: Mat,
    heads: Vec<AttentionCache>,
}

impl MultiHeadCache {
    /// Attention weights of head `h`.
    pub fn weights(&self, h: usize) -> &Mat {
        &self.heads[h].weights
    }
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut SimRng) -> MultiHeadAttention {
        assert!(heads > 0 && dim.is_multiple_of(heads), "model dimension {dim} is not divisible by {heads} heads");
        MultiHeadAttention {
            heads,
            w_q: Param::uniform(dim, dim, dim, rng),
            w_k: Param::uniform(dim, dim, dim, rng),
            w_v: Param::uniform(dim, dim, dim, rng),
            w_o: Param::uniform(dim, dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.value.rows()
    }

    pub fn forward(&self, x_q: &Mat, x_kv: &Mat) -> (Mat, MultiHeadCache) {
        let q = self.w_q.value.matmul(x_q);
        let k = self.w_k.value.matmul(x_kv);
        let v = self.w_v.value.matmul(x_kv);
        let dh = self.dim() / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut caches = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (o, c) = scaled_dot_attention(&q.row_block(h * dh, dh), &k.row_block(h * dh, dh), &v.row_block(h * dh, dh));
            outs.push(o);
            caches.push(c);
        }
        let concat = Mat::vstack(&outs);
        let y = self.w_o.value.matmul(&concat);
        (y, MultiHeadCache { x_q: x_q.clone(), x_kv: x_kv.clone(), concat, heads: caches })
    }

    /// Returns `(∂x_q, ∂x_kv)`.
    pub fn backward(&mut self, cache: &MultiHeadCache, grad: &Mat) -> (Mat, Mat) {
        self.w_o.grad += &grad.matmul_t(&cache.concat);
        let dconcat = self.w_o.value.t_matmul(grad);
        let dh = self.dim() / self.heads;
        let mut dq = Vec::with_capacity(self.heads);
        let mut dk = Vec::with_capacity(self.heads);
        let mut dv = Vec::with_capacity(self.heads);
        for (h, c) in cache.heads.iter().enumerate() {
            let (a, b, d) = scaled_dot_attention_backward(c, &dconcat.row_block(h * dh, dh));
            dq.push(a);
            dk.push(b);
            dv.push(d);
        }
        let (dq, dk, dv) = (Mat::vstack(&dq), Mat::vstack(&dk), Mat::vstack(&dv));
        self.w_q.grad += &dq.matmul_t(&cache.x_q);
        self.w_k.grad += &dk.matmul_t(&cache.x_kv);
        self.w_v.grad += &dv.matmul_t(&cache.x_kv);
        let dx_q = self.w_q.value.t_matmul(&dq);
        let dx_kv = self.w_k.value.t_matmul(&dk).add(&self.w_v.value.t_matmul(&dv));
        (dx_q, dx_kv)
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Param)> {
        vec![
            (format!("{prefix}.w_q"), &self.w_q),
            (format!("{prefix}.w_k"), &self.w_k),
            (format!("{prefix}.w_v"), &self.w_v),
            (format!("{prefix}.w_o"), &self.w_o),
        ]
    }

    pub(crate) fn all_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}

impl Parameterized for MultiHeadAttention {
    fn params(&self) -> Vec<(String, &Param)> {
        self.named("attention")
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.all_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut SimRng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn attention_weight_columns_are_distributions() {
        let mut rng = rng_from_seed(2);
        for (d, nq, nk) in [(1, 1, 1), (4, 3, 7), (8, 10, 2)] {
            let (_, c) = scaled_dot_attention(&random(d, nq, &mut rng), &random(d, nk, &mut rng), &random(3, nk, &mut rng));
            for j in 0..nq {
                let col = c.weights.col(j);
                assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(col.iter().all(|w| *w >= 0.0));
            }
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut rng = rng_from_seed(3);
        let v = random(2, 1, &mut rng);
        let (h, _) = scaled_dot_attention(&random(4, 5, &mut rng), &random(4, 1, &mut rng), &v);
        for j in 0..5 {
            assert_eq!(h.col(j), v.col(0));
        }
    }

    #[test]
    fn equal_keys_average_the_values() {
        let k = Mat::from_fn(3, 4, |_, _| 0.5);
        let v = Mat::from_rows(&[[1.0, 2.0, 3.0, 6.0]]);
        let (h, _) = scaled_dot_attention(&Mat::from_fn(3, 2, |i, j| (i + j) as f64), &k, &v);
        assert!((h[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn one_head_reduces_to_projected_single_attention() {
        let mut rng = rng_from_seed(4);
        let mha = MultiHeadAttention::new(6, 1, &mut rng);
        let x = random(6, 5, &mut rng);
        let (y, _) = mha.forward(&x, &x);
        let (h, _) = scaled_dot_attention(&mha.w_q.value.matmul(&x), &mha.w_k.value.matmul(&x), &mha.w_v.value.matmul(&x));
        let expected = mha.w_o.value.matmul(&h);
        assert!(y.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn heads_must_divide_dimension() {
        MultiHeadAttention::new(6, 4, &mut rng_from_seed(0));
    }
}
