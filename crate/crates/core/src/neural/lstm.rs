//! LSTM layers with backpropagation through time.
//!
//! A batch at one time step is an `inputs × batch` matrix; a sequence is a
//! slice of such matrices ordered in time.

use crate::numerics::{Mat, SimRng};

use super::{sigmoid_scalar, Dense, Param, Parameterized};

/// One LSTM layer. Gate rows are stacked as input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: Param,
    pub u: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Mat,
    h_prev: Mat,
    c_prev: Mat,
    i: Mat,
    f: Mat,
    g: Mat,
    o: Mat,
    tanh_c: Mat,
}

#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    steps: Vec<StepCache>,
}

impl LstmLayer {
    /// Weights uniform in `±1/√hidden`.
    pub fn new(inputs: usize, hidden: usize, rng: &mut SimRng) -> LstmLayer {
        LstmLayer {
            w: Param::uniform(4 * hidden, inputs, hidden, rng),
            u: Param::uniform(4 * hidden, hidden, hidden, rng),
            b: Param::uniform(4 * hidden, 1, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.value.cols()
    }

    pub fn inputs(&self) -> usize {
        self.w.value.cols()
    }

    /// Hidden states for every step, starting from zero state.
    pub fn forward(&self, xs: &[Mat]) -> (Vec<Mat>, LstmLayerCache) {
        let hd = self.hidden();
        let batch = xs.first().map_or(0, Mat::cols);
        let mut h = Mat::zeros(hd, batch);
        let mut c = Mat::zeros(hd, batch);
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        let bias = self.b.value.data();
        for x in xs {
            let mut z = self.w.value.matmul(x);
            z += &self.u.value.matmul(&h);
            for (r, chunk) in z.data_mut().chunks_mut(batch.max(1)).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[r]);
            }
            let i = z.row_block(0, hd).map(sigmoid_scalar);
            let f = z.row_block(hd, hd).map(sigmoid_scalar);
            let g = z.row_block(2 * hd, hd).map(f64::tanh);
            let o = z.row_block(3 * hd, hd).map(sigmoid_scalar);
            let c_new = f.hadamard(&c).add(&i.hadamard(&g));
            let tanh_c = c_new.map(f64::tanh);
            let h_new = o.hadamard(&tanh_c);
            steps.push(StepCache { x: x.clone(), h_prev: h, c_prev: c, i, f, g, o, tanh_c });
            h = h_new;
            c = c_new;
            hs.push(h.clone());
        }
        (hs, LstmLayerCache { steps })
    }

    /// `grads[t]` is `∂loss/∂h_t` from outside the recurrence. Returns
    /// `∂loss/∂x_t` for every step.
    pub fn backward(&mut self, cache: &LstmLayerCache, grads: &[Mat]) -> Vec<Mat> {
        assert_eq!(grads.len(), cache.steps.len(), "gradient count does not match sequence length");
        let mut dxs = vec![Mat::zeros(0, 0); grads.len()];
        let Some(first) = cache.steps.first() else { return dxs };
        let (hd, batch) = first.h_prev.shape();
        let mut dh_next = Mat::zeros(hd, batch);
        let mut dc_next = Mat::zeros(hd, batch);
        for t in (0..cache.steps.len()).rev() {
            let s = &cache.steps[t];
            let dh = grads[t].add(&dh_next);
            let d_o = dh.hadamard(&s.tanh_c);
            let dc = Mat::from_fn(hd, batch, |r, j| {
                dh[(r, j)] * s.o[(r, j)] * (1.0 - s.tanh_c[(r, j)].powi(2)) + dc_next[(r, j)]
            });
            let dz_i = Mat::from_fn(hd, batch, |r, j| dc[(r, j)] * s.g[(r, j)] * s.i[(r, j)] * (1.0 - s.i[(r, j)]));
            let dz_f = Mat::from_fn(hd, batch, |r, j| dc[(r, j)] * s.c_prev[(r, j)] * s.f[(r, j)] * (1.0 - s.f[(r, j)]));
            let dz_g = Mat::from_fn(hd, batch, |r, j| dc[(r, j)] * s.i[(r, j)] * (1.0 - s.g[(r, j)].powi(2)));
            let dz_o = Mat::from_fn(hd, batch, |r, j| d_o[(r, j)] * s.o[(r, j)] * (1.0 - s.o[(r, j)]));
            dc_next = dc.hadamard(&s.f);
            let dz = Mat::vstack(&[dz_i, dz_f, dz_g, dz_o]);
            self.w.grad += &dz.matmul_t(&s.x);
            self.u.grad += &dz.matmul_t(&s.h_prev);
            for (r, chunk) in dz.data().chunks(batch.max(1)).enumerate() {
                self.b.grad.data_mut()[r] += chunk.iter().sum::<f64>();
            }
            dxs[t] = self.w.value.t_matmul(&dz);
            dh_next = self.u.value.t_matmul(&dz);
        }
        dxs
    }
}

/// Stacked LSTM layers with a dense read-out of the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
    pub head: Dense,
}

#[derive(Debug, Clone)]
pub struct LstmStackCache {
    layers: Vec<LstmLayerCache>,
    last_hidden: Mat,
    steps: usize,
}

impl LstmStack {
    pub fn new(inputs: usize, hidden: usize, layers: usize, outputs: usize, rng: &mut SimRng) -> LstmStack {
        assert!(layers > 0, "an LSTM stack needs at least one layer");
        let layers = (0..layers).map(|l| LstmLayer::new(if l == 0 { inputs } else { hidden }, hidden, rng)).collect();
        LstmStack { layers, head: Dense::new(hidden, outputs, rng) }
    }

    /// Prediction (`outputs × batch`) from the final step.
    pub fn forward(&self, xs: &[Mat]) -> (Mat, LstmStackCache) {
        assert!(!xs.is_empty(), "empty input sequence");
        let mut seq = xs.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (hs, c) = layer.forward(&seq);
            caches.push(c);
            seq = hs;
        }
        let last_hidden = seq.pop().expect("non-empty sequence");
        let y = self.head.forward(&last_hidden);
        (y, LstmStackCache { layers: caches, last_hidden, steps: xs.len() })
    }

    pub fn predict(&self, xs: &[Mat]) -> Mat {
        self.forward(xs).0
    }

    /// Backward from `∂loss/∂prediction`; returns input gradients per step.
    pub fn backward(&mut self, cache: &LstmStackCache, grad: &Mat) -> Vec<Mat> {
        let dh_last = self.head.backward(&cache.last_hidden, grad);
        let (hd, batch) = dh_last.shape();
        let mut grads = vec![Mat::zeros(hd, batch); cache.steps];
        grads[cache.steps - 1] = dh_last;
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            grads = layer.backward(c, &grads);
        }
        grads
    }
}

impl Parameterized for LstmStack {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            v.push((format!("lstm.{l}.w"), &layer.w));
            v.push((format!("lstm.{l}.u"), &layer.u));
            v.push((format!("lstm.{l}.b"), &layer.b));
        }
        v.extend(self.head.named("lstm.head"));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for layer in &mut self.layers {
            v.push(&mut layer.w);
            v.push(&mut layer.u);
            v.push(&mut layer.b);
        }
        v.extend(self.head.all_mut());
        v
    }
}
