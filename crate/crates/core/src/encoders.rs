//! Self-supervised observation encoders.
//!
//! The LSTM encoder is trained on next-step prediction from a look-back
//! window; the transformer encoder on masked sequence reconstruction. Both
//! map an observation series to a series of the same length and dimension,
//! which the pipeline hands to EM in place of the raw measurements.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::checkpoint::{Checkpoint, CheckpointError, TensorRecord};
use crate::neural::{clip_grad_norm, mse_loss, AdamConfig, LstmStack, Parameterized, TransformerNet, TransformerShape};
use crate::numerics::{rng_from_seed, Mat, Vector};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("series of length {len} is too short for a look-back of {look_back}")]
    TooShort { len: usize, look_back: usize },
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("{stage} training diverged at epoch {epoch} (loss is not finite); try a lower learning rate or enable gradient clipping")]
    Diverged { stage: &'static str, epoch: usize },
    #[error("observations have inconsistent dimensions")]
    RaggedInput,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("failed to write encoded series: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSource {
    Raw,
    Lstm,
    Transformer,
    TransformerLstm,
}

impl SeriesSource {
    pub fn tag(self) -> &'static str {
        match self {
            SeriesSource::Raw => "raw",
            SeriesSource::Lstm => "lstm",
            SeriesSource::Transformer => "transformer",
            SeriesSource::TransformerLstm => "transformer_lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSeries {
    pub values: Vec<Vector>,
    pub source: SeriesSource,
}

impl EncodedSeries {
    pub fn raw(observations: &[Vector]) -> EncodedSeries {
        EncodedSeries { values: observations.to_vec(), source: SeriesSource::Raw }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Vector::is_finite)
    }

    /// Header `k,<source>_0,...`; `k` counts observations from 1.
    pub fn write_csv(&self, path: &Path) -> Result<(), EncoderError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = self.values.first().map_or(0, Vector::len);
        let mut header = vec!["k".to_string()];
        header.extend((0..dim).map(|i| format!("{}_{i}", self.source.tag())));
        writeln!(w, "{}", header.join(","))?;
        for (k, v) in self.values.iter().enumerate() {
            let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{}", k + 1, cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(window, next value)` pairs: window `i` covers `i..i+L`, its target is `i+L`.
pub fn make_lookback_windows<T: Clone>(series: &[T], look_back: usize) -> Result<Vec<(Vec<T>, T)>, EncoderError> {
    if look_back == 0 || series.len() <= look_back {
        return Err(EncoderError::TooShort { len: series.len(), look_back });
    }
    Ok(series.windows(look_back + 1).map(|w| (w[..look_back].to_vec(), w[look_back].clone())).collect())
}

fn input_dim(series: &[Vector]) -> Result<usize, EncoderError> {
    let dim = series.first().map_or(0, Vector::len);
    if dim == 0 || series.iter().any(|v| v.len() != dim) {
        return Err(EncoderError::RaggedInput);
    }
    Ok(dim)
}

/// Per-dimension z-score; a constant dimension gets unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(series: &[Vector]) -> Normalizer {
        let dim = series[0].len();
        let n = series.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|d| series.iter().map(|v| v[d]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|d| {
                let var = series.iter().map(|v| (v[d] - mean[d]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 * (1.0 + mean[d].abs()) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `dim × len` matrix of normalized values.
    fn columns(&self, series: &[Vector]) -> Mat {
        Mat::from_fn(self.dim(), series.len(), |d, k| (series[k][d] - self.mean[d]) / self.std[d])
    }

    fn restore(&self, m: &Mat) -> Vec<Vector> {
        (0..m.cols()).map(|k| Vector::new((0..self.dim()).map(|d| m[(d, k)] * self.std[d] + self.mean[d]).collect())).collect()
    }

    fn records(&self) -> Vec<TensorRecord> {
        vec![
            TensorRecord { name: "normalizer.mean".into(), shape: [self.dim(), 1], values: self.mean.clone() },
            TensorRecord { name: "normalizer.std".into(), shape: [self.dim(), 1], values: self.std.clone() },
        ]
    }

    fn from_records(records: &[TensorRecord]) -> Result<Normalizer, CheckpointError> {
        let find = |name: &str| {
            records
                .iter()
                .find(|r| r.name == name)
                .map(|r| r.values.clone())
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing {name}")))
        };
        let (mean, std) = (find("normalizer.mean")?, find("normalizer.std")?);
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(CheckpointError::Mismatch("invalid normalizer".into()));
        }
        Ok(Normalizer { mean, std })
    }
}

fn split_checkpoint(ck: &Checkpoint) -> Result<(Checkpoint, Normalizer), CheckpointError> {
    let (norm, net): (Vec<_>, Vec<_>) = ck.tensors.iter().cloned().partition(|t| t.name.starts_with("normalizer."));
    Ok((Checkpoint { tensors: net, ..ck.clone() }, Normalizer::from_records(&norm)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub look_back: usize,
    pub epochs: usize,
    pub train_fraction: f64,
    /// Windows per Adam step; absent means the whole training set.
    pub batch_size: Option<usize>,
    /// Global gradient-norm ceiling; absent means no clipping.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            layers: 3,
            hidden: 10,
            look_back: 5,
            epochs: 100,
            train_fraction: 0.9,
            batch_size: None,
            clip_norm: None,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.look_back == 0 {
            return bad("lstm.look_back must be at least 1".into());
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("lstm.layers and lstm.hidden must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("lstm.train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.batch_size == Some(0) {
            return bad("lstm.batch_size must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("lstm.clip_norm must be positive".into());
            }
        }
        self.adam.validate().map_err(|e| EncoderError::InvalidConfig(format!("lstm.{e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmEncoder {
    pub net: LstmStack,
    pub normalizer: Normalizer,
    pub look_back: usize,
    /// Final MSE on the training windows, in observation units.
    pub train_loss: f64,
    /// MSE on the held-out windows, in observation units.
    pub held_out_loss: Option<f64>,
}

/// Batched window inputs: one `dim × batch` matrix per look-back step.
fn window_batch(x: &Mat, starts: &[usize], look_back: usize) -> (Vec<Mat>, Mat) {
    let dim = x.rows();
    let steps = (0..look_back).map(|t| Mat::from_fn(dim, starts.len(), |d, j| x[(d, starts[j] + t)])).collect();
    let target = Mat::from_fn(dim, starts.len(), |d, j| x[(d, starts[j] + look_back)]);
    (steps, target)
}

fn mse_in_units(pred: &Mat, target: &Mat, norm: &Normalizer) -> f64 {
    let mut total = 0.0;
    for d in 0..pred.rows() {
        for j in 0..pred.cols() {
            total += ((pred[(d, j)] - target[(d, j)]) * norm.std[d]).powi(2);
        }
    }
    total / (pred.rows() * pred.cols()) as f64
}

pub fn train_lstm(observations: &[Vector], config: &LstmConfig) -> Result<LstmEncoder, EncoderError> {
    config.validate()?;
    let dim = input_dim(observations)?;
    let windows = observations.len().checked_sub(config.look_back).filter(|w| *w > 0);
    let Some(count) = windows else {
        return Err(EncoderError::TooShort { len: observations.len(), look_back: config.look_back });
    };
    let n_train = ((count as f64 * config.train_fraction).round() as usize).clamp(1, count);
    let normalizer = Normalizer::fit(&observations[..n_train + config.look_back]);
    let x = normalizer.columns(observations);

    let mut rng = rng_from_seed(config.seed);
    let mut net = LstmStack::new(dim, config.hidden, config.layers, dim, &mut rng);
    let mut order: Vec<usize> = (0..n_train).collect();
    let batch = config.batch_size.unwrap_or(n_train).min(n_train);
    for epoch in 0..config.epochs {
        if batch < n_train {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (xs, target) = window_batch(&x, chunk, config.look_back);
            let (y, cache) = net.forward(&xs);
            let (loss, g) = mse_loss(&y, &target, None);
            if !loss.is_finite() {
                return Err(EncoderError::Diverged { stage: "lstm", epoch });
            }
            net.backward(&cache, &g);
            if let Some(c) = config.clip_norm {
                clip_grad_norm(&mut net.params_mut(), c);
            }
            net.adam_step(&config.adam);
        }
    }

    let all: Vec<usize> = (0..count).collect();
    let (xs, target) = window_batch(&x, &all, config.look_back);
    let pred = net.predict(&xs);
    if !pred.is_finite() {
        return Err(EncoderError::Diverged { stage: "lstm", epoch: config.epochs });
    }
    let head = |m: &Mat, r: std::ops::Range<usize>| Mat::from_fn(dim, r.len(), |d, j| m[(d, r.start + j)]);
    let train_loss = mse_in_units(&head(&pred, 0..n_train), &head(&target, 0..n_train), &normalizer);
    let held_out_loss =
        (n_train < count).then(|| mse_in_units(&head(&pred, n_train..count), &head(&target, n_train..count), &normalizer));
    Ok(LstmEncoder { net, normalizer, look_back: config.look_back, train_loss, held_out_loss })
}

impl LstmEncoder {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::capture(&self.net);
        ck.tensors.extend(self.normalizer.records());
        ck
    }

    /// Rebuilds an encoder saved with [`LstmEncoder::checkpoint`]; `config`
    /// must describe the same architecture.
    pub fn from_checkpoint(ck: &Checkpoint, config: &LstmConfig) -> Result<LstmEncoder, EncoderError> {
        let (net_ck, normalizer) = split_checkpoint(ck)?;
        let dim = normalizer.dim();
        let mut net = LstmStack::new(dim, config.hidden, config.layers, dim, &mut rng_from_seed(0));
        net_ck.restore(&mut net)?;
        Ok(LstmEncoder { net, normalizer, look_back: config.look_back, train_loss: f64::NAN, held_out_loss: None })
    }
}

/// The first `look_back` positions pass through unchanged; each later
/// position is the one-step prediction from its trailing window.
pub fn lstm_encode(encoder: &LstmEncoder, observations: &[Vector]) -> EncodedSeries {
    let l = encoder.look_back;
    let mut values: Vec<Vector> = observations.iter().take(l).cloned().collect();
    if observations.len() > l {
        let x = encoder.normalizer.columns(observations);
        let starts: Vec<usize> = (0..observations.len() - l).collect();
        let (xs, _) = window_batch(&x, &starts, l);
        values.extend(encoder.normalizer.restore(&encoder.net.predict(&xs)));
    }
    EncodedSeries { values, source: SeriesSource::Lstm }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Feed-forward width; absent means four times the sequence length.
    pub ffn_hidden: Option<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    /// Leading share of positions that contribute to the training loss.
    pub train_fraction: f64,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            model_dim: 512,
            heads: 4,
            blocks: 6,
            ffn_hidden: None,
            dropout_rate: 0.1,
            epochs: 500,
            train_fraction: 0.9,
            clip_norm: None,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TransformerConfig {
    /// Reduced width and training length for quick runs.
    pub fn desk() -> TransformerConfig {
        TransformerConfig { model_dim: 32, epochs: 100, ..TransformerConfig::default() }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!("transformer.model_dim {} must be a positive multiple of heads {}", self.model_dim, self.heads));
        }
        if self.ffn_hidden == Some(0) {
            return bad("transformer.ffn_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("transformer.dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("transformer.train_fraction must lie in (0, 1], got {}", self.train_fraction));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("transformer.clip_norm must be positive".into());
            }
        }
        self.adam.validate().map_err(|e| EncoderError::InvalidConfig(format!("transformer.{e}")))
    }

    fn shape(&self, inputs: usize, len: usize) -> TransformerShape {
        TransformerShape {
            inputs,
            model_dim: self.model_dim,
            heads: self.heads,
            layers: self.blocks,
            ffn_hidden: self.ffn_hidden.unwrap_or(4 * len),
            dropout: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    pub net: TransformerNet,
    pub normalizer: Normalizer,
    pub train_loss: f64,
    pub held_out_loss: Option<f64>,
}

fn position_mask(len: usize, train_fraction: f64) -> Vec<f64> {
    let n_train = ((len as f64 * train_fraction).round() as usize).clamp(1, len);
    (0..len).map(|k| if k < n_train { 1.0 } else { 0.0 }).collect()
}

pub fn train_transformer(observations: &[Vector], config: &TransformerConfig) -> Result<TransformerEncoder, EncoderError> {
    config.validate()?;
    let dim = input_dim(observations)?;
    if observations.len() < 2 {
        return Err(EncoderError::TooShort { len: observations.len(), look_back: 1 });
    }
    let mask = position_mask(observations.len(), config.train_fraction);
    let n_train = mask.iter().filter(|m| **m > 0.0).count();
    let normalizer = Normalizer::fit(&observations[..n_train]);
    let x = normalizer.columns(observations);

    let mut rng = rng_from_seed(config.seed);
    let mut net = TransformerNet::new(config.shape(dim, observations.len()), &mut rng);
    for epoch in 0..config.epochs {
        let (y, cache) = net.forward(&x, true, &mut rng);
        let (loss, g) = mse_loss(&y, &x, Some(&mask));
        if !loss.is_finite() {
            return Err(EncoderError::Diverged { stage: "transformer", epoch });
        }
        net.backward(&cache, &g);
        if let Some(c) = config.clip_norm {
            clip_grad_norm(&mut net.params_mut(), c);
        }
        net.adam_step(&config.adam);
    }

    let (y, _) = net.forward(&x, false, &mut rng);
    if !y.is_finite() {
        return Err(EncoderError::Diverged { stage: "transformer", epoch: config.epochs });
    }
    let cols = |m: &Mat, r: std::ops::Range<usize>| Mat::from_fn(dim, r.len(), |d, j| m[(d, r.start + j)]);
    let len = observations.len();
    let train_loss = mse_in_units(&cols(&y, 0..n_train), &cols(&x, 0..n_train), &normalizer);
    let held_out_loss = (n_train < len).then(|| mse_in_units(&cols(&y, n_train..len), &cols(&x, n_train..len), &normalizer));
    Ok(TransformerEncoder { net, normalizer, train_loss, held_out_loss })
}

impl TransformerEncoder {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::capture(&self.net);
        ck.tensors.extend(self.normalizer.records());
        ck
    }

    /// `train_len` is the sequence length the encoder was trained on; it
    /// fixes the default feed-forward width.
    pub fn from_checkpoint(ck: &Checkpoint, config: &TransformerConfig, train_len: usize) -> Result<TransformerEncoder, EncoderError> {
        let (net_ck, normalizer) = split_checkpoint(ck)?;
        let mut net = TransformerNet::new(config.shape(normalizer.dim(), train_len), &mut rng_from_seed(0));
        net_ck.restore(&mut net)?;
        Ok(TransformerEncoder { net, normalizer, train_loss: f64::NAN, held_out_loss: None })
    }
}

/// Eval-mode pass over the whole sequence.
pub fn transformer_encode(encoder: &TransformerEncoder, observations: &[Vector]) -> EncodedSeries {
    let x = encoder.normalizer.columns(observations);
    // Dropout is off in eval mode, so the generator is never consulted.
    let (y, _) = encoder.net.forward(&x, false, &mut rng_from_seed(0));
    EncodedSeries { values: encoder.normalizer.restore(&y), source: SeriesSource::Transformer }
}

/// LSTM stage of the transformer-then-LSTM chain, given a trained transformer.
pub fn tl_encode_with(
    transformer: &TransformerEncoder,
    observations: &[Vector],
    l_config: &LstmConfig,
) -> Result<EncodedSeries, EncoderError> {
    let stage1 = transformer_encode(transformer, observations);
    let lstm = train_lstm(&stage1.values, l_config)?;
    let mut out = lstm_encode(&lstm, &stage1.values);
    out.source = SeriesSource::TransformerLstm;
    Ok(out)
}

pub fn tl_encode(observations: &[Vector], t_config: &TransformerConfig, l_config: &LstmConfig) -> Result<EncodedSeries, EncoderError> {
    l_config.validate()?;
    let transformer = train_transformer(observations, t_config)?;
    tl_encode_with(&transformer, observations, l_config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SimRng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_series(values: impl IntoIterator<Item = f64>) -> Vec<Vector> {
        values.into_iter().map(|v| Vector::new(vec![v])).collect()
    }

    fn small_transformer() -> TransformerConfig {
        TransformerConfig { model_dim: 16, heads: 2, blocks: 1, ffn_hidden: Some(32), epochs: 60, adam: AdamConfig { lr: 0.01, ..AdamConfig::default() }, ..TransformerConfig::default() }
    }

    #[test]
    fn window_examples() {
        let w = make_lookback_windows(&[1, 2, 3, 4, 5, 6, 7], 5).unwrap();
        assert_eq!(w, vec![(vec![1, 2, 3, 4, 5], 6), (vec![2, 3, 4, 5, 6], 7)]);
        assert_eq!(make_lookback_windows(&[0; 6], 5).unwrap().len(), 1);
        assert!(make_lookback_windows(&[3.5; 9], 4).unwrap().iter().all(|(_, t)| *t == 3.5));
        assert!(matches!(make_lookback_windows(&[1, 2, 3], 3), Err(EncoderError::TooShort { len: 3, look_back: 3 })));
    }

    #[test]
    fn lstm_learns_a_constant() {
        let obs = scalar_series(std::iter::repeat_n(0.7, 60));
        let enc = train_lstm(&obs, &LstmConfig { epochs: 100, adam: AdamConfig { lr: 0.01, ..AdamConfig::default() }, ..LstmConfig::default() }).unwrap();
        assert!(enc.held_out_loss.unwrap() < 1e-4, "{:?}", enc.held_out_loss);
    }

    #[test]
    fn lstm_training_is_deterministic() {
        let obs = scalar_series((0..40).map(|k| (k as f64 * 0.2).sin()));
        let cfg = LstmConfig { epochs: 5, ..LstmConfig::default() };
        assert_eq!(train_lstm(&obs, &cfg).unwrap(), train_lstm(&obs, &cfg).unwrap());
    }

    #[test]
    fn lstm_denoises_a_sine() {
        let mut rng: SimRng = rng_from_seed(9);
        let obs = scalar_series((0..300).map(|k| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (k as f64 * 0.1).sin() + 0.1 * e
        }));
        let cfg = LstmConfig { epochs: 150, adam: AdamConfig { lr: 0.01, ..AdamConfig::default() }, ..LstmConfig::default() };
        let enc = train_lstm(&obs, &cfg).unwrap();
        assert!(enc.held_out_loss.unwrap() < 0.02, "{:?}", enc.held_out_loss);
    }

    #[test]
    fn lstm_encode_boundary_and_trend() {
        let obs = scalar_series((0..80).map(|k| 0.05 * k as f64 - 1.0));
        let cfg = LstmConfig { epochs: 200, adam: AdamConfig { lr: 0.01, ..AdamConfig::default() }, ..LstmConfig::default() };
        let enc = train_lstm(&obs, &cfg).unwrap();
        let out = lstm_encode(&enc, &obs);
        assert_eq!(out.len(), obs.len());
        assert_eq!(&out.values[..5], &obs[..5]);
        let rms_err = (out.values.iter().zip(&obs).map(|(a, b)| (a[0] - b[0]).powi(2)).sum::<f64>() / 80.0).sqrt();
        let rms = (obs.iter().map(|b| b[0] * b[0]).sum::<f64>() / 80.0).sqrt();
        assert!(rms_err < 0.05 * rms, "{rms_err} vs {rms}");
    }

    #[test]
    fn untrained_transformer_output_is_finite() {
        let obs = scalar_series((0..20).map(|k| k as f64));
        let enc = train_transformer(&obs, &TransformerConfig { epochs: 0, ..small_transformer() }).unwrap();
        let out = transformer_encode(&enc, &obs);
        assert_eq!(out.len(), 20);
        assert!(out.is_finite());
        assert_eq!(out, transformer_encode(&enc, &obs));
    }

    #[test]
    fn transformer_reconstructs_a_constant() {
        let obs = scalar_series(std::iter::repeat_n(-0.3, 30));
        let enc = train_transformer(&obs, &small_transformer()).unwrap();
        let out = transformer_encode(&enc, &obs);
        let mse = out.values.iter().map(|v| (v[0] + 0.3).powi(2)).sum::<f64>() / 30.0;
        assert!(mse < 1e-3, "{mse}");
    }

    #[test]
    fn transformer_is_permutation_sensitive() {
        let mut rng = rng_from_seed(1);
        let obs = scalar_series((0..12).map(|_| rng.random_range(-1.0..1.0)));
        let enc = train_transformer(&obs, &TransformerConfig { epochs: 3, ..small_transformer() }).unwrap();
        let mut perm = obs.clone();
        perm.swap(2, 7);
        let a = transformer_encode(&enc, &obs);
        let b = transformer_encode(&enc, &perm);
        let moved = (0..12).any(|k| {
            let j = match k {
                2 => 7,
                7 => 2,
                _ => k,
            };
            (a.values[j][0] - b.values[k][0]).abs() > 1e-9
        });
        assert!(moved);
    }

    #[test]
    fn tl_chain_is_deterministic_and_tagged() {
        let obs = scalar_series((0..30).map(|k| (k as f64 * 0.3).cos()));
        let t = TransformerConfig { epochs: 5, ..small_transformer() };
        let l = LstmConfig { epochs: 5, ..LstmConfig::default() };
        let a = tl_encode(&obs, &t, &l).unwrap();
        assert_eq!(a.source, SeriesSource::TransformerLstm);
        assert_eq!(a.len(), 30);
        assert_eq!(a, tl_encode(&obs, &t, &l).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let obs = scalar_series((0..30).map(|k| if k % 2 == 0 { 1e150 } else { -1e150 }));
        let cfg = LstmConfig { epochs: 3, ..LstmConfig::default() };
        // Normalization rescales this series; force blow-up through the learning rate instead.
        let huge = LstmConfig { adam: AdamConfig { lr: 1e300, ..AdamConfig::default() }, ..cfg };
        assert!(matches!(train_lstm(&obs, &huge), Err(EncoderError::Diverged { stage: "lstm", .. })));
    }

    #[test]
    fn checkpoints_round_trip() {
        let obs = scalar_series((0..25).map(|k| (k as f64 * 0.4).sin() + 2.0));
        let lcfg = LstmConfig { epochs: 3, ..LstmConfig::default() };
        let l = train_lstm(&obs, &lcfg).unwrap();
        let l2 = LstmEncoder::from_checkpoint(&Checkpoint::from_json(&l.checkpoint().to_json()).unwrap(), &lcfg).unwrap();
        assert_eq!(lstm_encode(&l, &obs), lstm_encode(&l2, &obs));

        let tcfg = TransformerConfig { epochs: 2, ffn_hidden: None, ..small_transformer() };
        let t = train_transformer(&obs, &tcfg).unwrap();
        let t2 = TransformerEncoder::from_checkpoint(&t.checkpoint(), &tcfg, obs.len()).unwrap();
        assert_eq!(transformer_encode(&t, &obs), transformer_encode(&t2, &obs));
    }

    #[test]
    fn encoded_series_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.csv");
        let s = EncodedSeries { values: scalar_series([0.5, 1.25]), source: SeriesSource::TransformerLstm };
        s.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "k,transformer_lstm_0\n1,0.5\n2,1.25\n");
    }
}
