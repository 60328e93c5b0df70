//! The five estimation methods and their comparison metrics.
//!
//! * `KF`: filter and smooth under the initial guess, no fitting.
//! * `EM_KF`: EM on the raw observations, then filter and smooth.
//! * `LSTM_KF`, `TRANSFORMER_KF`, `TL_KF`: EM on the raw observations fixes
//!   `R`; the observations are re-encoded and a second EM run on the encoded
//!   series fits `Q`, `m0`, `P0` with `R` held. The final filter and
//!   smoother run on the raw observations unless configured otherwise.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{em_fit, EmConfig, EmError, FreeParams, ModelParam};
use crate::encoders::{
    lstm_encode, tl_encode_with, train_lstm, train_transformer, transformer_encode, EncodedSeries, EncoderError, LstmConfig,
    TransformerConfig, TransformerEncoder,
};
use crate::kalman::{filter_and_smooth, KalmanError};
use crate::numerics::Vector;
use crate::statespace::{LinearGaussianModel, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "KF")]
    Kf,
    #[serde(rename = "EM_KF")]
    EmKf,
    #[serde(rename = "LSTM_KF")]
    LstmKf,
    #[serde(rename = "TRANSFORMER_KF")]
    TransformerKf,
    #[serde(rename = "TL_KF")]
    TlKf,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Kf, MethodKind::EmKf, MethodKind::LstmKf, MethodKind::TransformerKf, MethodKind::TlKf];

    /// Identifier used in file names and configuration.
    pub fn id(self) -> &'static str {
        match self {
            MethodKind::Kf => "KF",
            MethodKind::EmKf => "EM_KF",
            MethodKind::LstmKf => "LSTM_KF",
            MethodKind::TransformerKf => "TRANSFORMER_KF",
            MethodKind::TlKf => "TL_KF",
        }
    }

    /// Display name used in the tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Kf => "KF",
            MethodKind::EmKf => "EM-KF",
            MethodKind::LstmKf => "LSTM-KF",
            MethodKind::TransformerKf => "Transformer-KF",
            MethodKind::TlKf => "TL-KF",
        }
    }

    pub fn uses_em(self) -> bool {
        self != MethodKind::Kf
    }

    pub fn uses_transformer(self) -> bool {
        matches!(self, MethodKind::TransformerKf | MethodKind::TlKf)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    /// Accepts the identifier or the table label, ignoring case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        MethodKind::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(t) || m.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown method {s:?} (expected one of KF, EM_KF, LSTM_KF, TRANSFORMER_KF, TL_KF)"))
    }
}

/// Which series the final filter and smoother of an encoder method consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalFilterInput {
    #[default]
    Raw,
    Encoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub em: EmConfig,
    pub lstm: LstmConfig,
    pub transformer: TransformerConfig,
    pub final_filter: FinalFilterInput,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            em: EmConfig::default(),
            lstm: LstmConfig::default(),
            transformer: TransformerConfig::desk(),
            final_filter: FinalFilterInput::Raw,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{method}: EM ({pass}) failed: {source}")]
    Em {
        method: MethodKind,
        pass: &'static str,
        #[source]
        source: EmError,
    },
    #[error("{method}: encoder training failed: {message}")]
    Encoder { method: MethodKind, message: String },
    #[error("{method}: final filter/smoother failed: {source}")]
    Filter {
        method: MethodKind,
        #[source]
        source: KalmanError,
    },
}

impl PipelineError {
    pub fn method(&self) -> MethodKind {
        match self {
            PipelineError::Em { method, .. } | PipelineError::Encoder { method, .. } | PipelineError::Filter { method, .. } => {
                *method
            }
        }
    }
}

/// Scalar summaries of a fitted model: `tr(Q)/u`, `tr(R)/v`, last entry of
/// `m0`, `tr(P0)/u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub sigma_q2: f64,
    pub sigma_r2: f64,
    pub m_a: f64,
    pub sigma_p2: f64,
}

impl ParamSummary {
    pub fn of(model: &LinearGaussianModel) -> ParamSummary {
        let u = model.state_dim() as f64;
        ParamSummary {
            sigma_q2: model.q.trace() / u,
            sigma_r2: model.r.trace() / model.obs_dim() as f64,
            m_a: model.m0[model.state_dim() - 1],
            sigma_p2: model.p0.trace() / u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: MethodKind,
    pub seed: u64,
    pub fitted: LinearGaussianModel,
    pub sigma_q2: f64,
    pub sigma_r2: f64,
    pub m_a: f64,
    pub sigma_p2: f64,
    pub filter_mse: f64,
    pub smoother_mse: f64,
    pub training_seconds: f64,
    pub em_seconds: f64,
    pub em_iterations: usize,
    pub encoder_train_loss: Option<f64>,
    pub encoder_held_out_loss: Option<f64>,
    /// Filtered displacement for `k = 0..N`.
    #[serde(skip)]
    pub filtered_displacement: Vec<f64>,
    /// Smoothed displacement for `k = 0..N`.
    #[serde(skip)]
    pub smoothed_displacement: Vec<f64>,
}

impl MethodReport {
    pub fn summary(&self) -> ParamSummary {
        ParamSummary { sigma_q2: self.sigma_q2, sigma_r2: self.sigma_r2, m_a: self.m_a, sigma_p2: self.sigma_p2 }
    }

    /// `filter_mse − smoother_mse`.
    pub fn smoothing_gain(&self) -> f64 {
        self.filter_mse - self.smoother_mse
    }
}

/// Mean over `k = 1..N` of the squared displacement error. `estimates`
/// is indexed like `truth.states` (`k = 0..N`).
///
/// Panics when the lengths differ.
pub fn displacement_mse(estimates: &[Vector], truth: &Trajectory) -> f64 {
    assert_eq!(
        estimates.len(),
        truth.states.len(),
        "estimate count {} does not match trajectory length {}",
        estimates.len(),
        truth.states.len()
    );
    let n = truth.states.len() - 1;
    assert!(n > 0, "trajectory has no observations");
    (1..=n).map(|k| (estimates[k][0] - truth.states[k][0]).powi(2)).sum::<f64>() / n as f64
}

/// A trained transformer plus its wall-clock training time.
#[derive(Debug, Clone)]
pub struct TrainedTransformer {
    pub encoder: TransformerEncoder,
    pub seconds: f64,
}

pub fn train_shared_transformer(observations: &[Vector], config: &TransformerConfig) -> Result<TrainedTransformer, EncoderError> {
    let start = Instant::now();
    let encoder = train_transformer(observations, config)?;
    Ok(TrainedTransformer { encoder, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone)]
struct Encoding {
    series: EncodedSeries,
    seconds: f64,
    train_loss: Option<f64>,
    held_out_loss: Option<f64>,
}

/// Encoders trained on one observation series. Encodings do not depend on
/// the initial parameter guess, so a cache built for one trajectory can
/// serve every method and every initial setting run on it. The transformer
/// is trained at most once and its training time is charged to each method
/// that uses it.
#[derive(Debug, Default)]
pub struct EncoderCache {
    transformer: Option<Result<TrainedTransformer, String>>,
    encodings: Vec<(MethodKind, Result<Encoding, String>)>,
}

impl EncoderCache {
    pub fn new() -> EncoderCache {
        EncoderCache::default()
    }

    /// Trained transformer, if one has been requested and training succeeded.
    pub fn transformer(&self) -> Option<&TrainedTransformer> {
        self.transformer.as_ref().and_then(|t| t.as_ref().ok())
    }

    fn transformer_for(&mut self, observations: &[Vector], config: &TransformerConfig) -> Result<&TrainedTransformer, String> {
        let slot = self
            .transformer
            .get_or_insert_with(|| train_shared_transformer(observations, config).map_err(|e| e.to_string()));
        slot.as_ref().map_err(Clone::clone)
    }

    fn encode(&mut self, kind: MethodKind, observations: &[Vector], config: &PipelineConfig) -> Result<Encoding, PipelineError> {
        if let Some((_, e)) = self.encodings.iter().find(|(k, _)| *k == kind) {
            return e.clone().map_err(|message| PipelineError::Encoder { method: kind, message });
        }
        let result = self.encode_uncached(kind, observations, config);
        self.encodings.push((kind, result.clone()));
        result.map_err(|message| PipelineError::Encoder { method: kind, message })
    }

    fn encode_uncached(&mut self, kind: MethodKind, observations: &[Vector], config: &PipelineConfig) -> Result<Encoding, String> {
        let err = |e: EncoderError| e.to_string();
        match kind {
            MethodKind::LstmKf => {
                let start = Instant::now();
                let enc = train_lstm(observations, &config.lstm).map_err(err)?;
                let series = lstm_encode(&enc, observations);
                let seconds = start.elapsed().as_secs_f64();
                Ok(Encoding { series, seconds, train_loss: Some(enc.train_loss), held_out_loss: enc.held_out_loss })
            }
            MethodKind::TransformerKf => {
                let t = self.transformer_for(observations, &config.transformer)?;
                Ok(Encoding {
                    series: transformer_encode(&t.encoder, observations),
                    seconds: t.seconds,
                    train_loss: Some(t.encoder.train_loss),
                    held_out_loss: t.encoder.held_out_loss,
                })
            }
            MethodKind::TlKf => {
                let t = self.transformer_for(observations, &config.transformer)?;
                let start = Instant::now();
                let series = tl_encode_with(&t.encoder, observations, &config.lstm).map_err(err)?;
                Ok(Encoding {
                    series,
                    seconds: t.seconds + start.elapsed().as_secs_f64(),
                    train_loss: Some(t.encoder.train_loss),
                    held_out_loss: t.encoder.held_out_loss,
                })
            }
            MethodKind::Kf | MethodKind::EmKf => unreachable!("no encoder for {kind}"),
        }
    }
}

/// Runs one method on one trajectory. Trains its own encoders.
pub fn run_method(
    kind: MethodKind,
    trajectory: &Trajectory,
    init: &LinearGaussianModel,
    config: &PipelineConfig,
) -> Result<MethodReport, PipelineError> {
    run_method_with(kind, trajectory, init, config, &mut EncoderCache::new())
}

/// Like [`run_method`], drawing encodings from `cache`. The cache must only
/// ever see `trajectory`'s observations and the same encoder configuration.
pub fn run_method_with(
    kind: MethodKind,
    trajectory: &Trajectory,
    init: &LinearGaussianModel,
    config: &PipelineConfig,
    cache: &mut EncoderCache,
) -> Result<MethodReport, PipelineError> {
    let raw = &trajectory.observations;
    let mut training_seconds = 0.0;
    let mut em_seconds = 0.0;
    let mut em_iterations = 0;
    let mut losses = (None, None);
    let mut filter_input: &[Vector] = raw;
    let encoded;

    let fitted = match kind {
        MethodKind::Kf => init.clone(),
        MethodKind::EmKf => {
            let start = Instant::now();
            let rep = em_fit(raw, init, &config.em).map_err(|source| PipelineError::Em { method: kind, pass: "raw", source })?;
            em_seconds += start.elapsed().as_secs_f64();
            em_iterations += rep.iterations_run;
            rep.fitted
        }
        MethodKind::LstmKf | MethodKind::TransformerKf | MethodKind::TlKf => {
            let pass1 = EmConfig { free_params: FreeParams::of(&[ModelParam::R]), ..config.em };
            let start = Instant::now();
            let rep1 = em_fit(raw, init, &pass1).map_err(|source| PipelineError::Em { method: kind, pass: "R on raw", source })?;
            em_seconds += start.elapsed().as_secs_f64();
            em_iterations += rep1.iterations_run;

            let enc = cache.encode(kind, raw, config)?;
            training_seconds = enc.seconds;
            losses = (enc.train_loss, enc.held_out_loss);
            encoded = enc.series;

            let pass2 = EmConfig { free_params: FreeParams::of(&[ModelParam::Q, ModelParam::M0, ModelParam::P0]), ..config.em };
            let start = Instant::now();
            let rep2 = em_fit(&encoded.values, &rep1.fitted, &pass2)
                .map_err(|source| PipelineError::Em { method: kind, pass: "Q, m0, P0 on encoded", source })?;
            em_seconds += start.elapsed().as_secs_f64();
            em_iterations += rep2.iterations_run;
            if config.final_filter == FinalFilterInput::Encoded {
                filter_input = &encoded.values;
            }
            rep2.fitted
        }
    };

    let (f, s) = filter_and_smooth(&fitted, filter_input).map_err(|source| PipelineError::Filter { method: kind, source })?;
    let filtered = f.means();
    let smoothed = s.means();
    let summary = ParamSummary::of(&fitted);
    Ok(MethodReport {
        method: kind,
        seed: trajectory.seed,
        sigma_q2: summary.sigma_q2,
        sigma_r2: summary.sigma_r2,
        m_a: summary.m_a,
        sigma_p2: summary.sigma_p2,
        filter_mse: displacement_mse(&filtered, trajectory),
        smoother_mse: displacement_mse(&smoothed, trajectory),
        training_seconds,
        em_seconds,
        em_iterations,
        encoder_train_loss: losses.0,
        encoder_held_out_loss: losses.1,
        filtered_displacement: filtered.iter().map(|m| m[0]).collect(),
        smoothed_displacement: smoothed.iter().map(|m| m[0]).collect(),
        fitted,
    })
}

#[derive(Debug, Default)]
pub struct SuiteResult {
    pub reports: Vec<MethodReport>,
    pub failures: Vec<PipelineError>,
}

impl SuiteResult {
    pub fn report(&self, kind: MethodKind) -> Option<&MethodReport> {
        self.reports.iter().find(|r| r.method == kind)
    }
}

/// Runs `methods` on one trajectory from the same initial guess. A failing
/// method is recorded and the rest still run.
pub fn run_suite(trajectory: &Trajectory, init: &LinearGaussianModel, config: &PipelineConfig, methods: &[MethodKind]) -> SuiteResult {
    run_suite_with(trajectory, init, config, methods, &mut EncoderCache::new())
}

pub fn run_suite_with(
    trajectory: &Trajectory,
    init: &LinearGaussianModel,
    config: &PipelineConfig,
    methods: &[MethodKind],
    cache: &mut EncoderCache,
) -> SuiteResult {
    let mut out = SuiteResult::default();
    for &kind in methods {
        match run_method_with(kind, trajectory, init, config, cache) {
            Ok(r) => out.reports.push(r),
            Err(e) => out.failures.push(e),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::filter;
    use crate::statespace::{robot_model_from, RobotParams};

    fn traj_of(states: Vec<f64>) -> Trajectory {
        Trajectory {
            states: states.iter().map(|x| Vector::new(vec![*x, 0.0, 0.0])).collect(),
            observations: states[1..].iter().map(|x| Vector::new(vec![*x])).collect(),
            seed: 0,
        }
    }

    #[test]
    fn displacement_mse_examples() {
        let t = traj_of(vec![0.0, 1.0, 2.0]);
        assert_eq!(displacement_mse(&t.states, &t), 0.0);
        let shifted: Vec<Vector> = t.states.iter().map(|s| Vector::new(vec![s[0] + 0.5, s[1], s[2]])).collect();
        assert_eq!(displacement_mse(&shifted, &t), 0.25);
        let est = vec![Vector::new(vec![9.0]), Vector::new(vec![1.1]), Vector::new(vec![1.7])];
        assert!((displacement_mse(&est, &t) - 0.05).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn displacement_mse_rejects_length_mismatch() {
        let t = traj_of(vec![0.0, 1.0, 2.0]);
        displacement_mse(&t.states[..2], &t);
    }

    #[test]
    fn method_names_parse_both_ways() {
        for m in MethodKind::ALL {
            assert_eq!(m.id().parse::<MethodKind>().unwrap(), m);
            assert_eq!(m.label().parse::<MethodKind>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.id()));
        }
        assert!("KF2".parse::<MethodKind>().is_err());
    }

    #[test]
    fn kf_passthrough_matches_plain_filter() {
        let truth = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let t = truth.simulate(100, 4).unwrap();
        let before = t.clone();
        let r = run_method(MethodKind::Kf, &t, &truth, &PipelineConfig::default()).unwrap();
        let f = filter(&truth, &t.observations).unwrap();
        assert_eq!(r.filter_mse, displacement_mse(&f.means(), &t));
        assert_eq!(r.fitted, truth);
        assert_eq!(t, before);
        assert_eq!(r.filtered_displacement.len(), 101);
    }

    #[test]
    fn em_kf_recovers_measurement_noise_scale() {
        let truth = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let init = robot_model_from(0.01, RobotParams::INITIAL_GUESS).unwrap();
        let t = truth.simulate(200, 0).unwrap();
        let r = run_method(MethodKind::EmKf, &t, &init, &PipelineConfig::default()).unwrap();
        assert!(r.sigma_r2 > 1e-3 && r.sigma_r2 < 2e-2, "{}", r.sigma_r2);
        assert!(r.filter_mse.is_finite() && r.filter_mse >= 0.0);
        assert!(r.em_iterations > 0);
    }

    #[test]
    fn encoder_method_holds_pass_one_r() {
        let truth = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let init = robot_model_from(0.01, RobotParams::INITIAL_GUESS).unwrap();
        let t = truth.simulate(60, 2).unwrap();
        let cfg = PipelineConfig { lstm: LstmConfig { epochs: 3, ..LstmConfig::default() }, ..PipelineConfig::default() };
        let r = run_method(MethodKind::LstmKf, &t, &init, &cfg).unwrap();
        let pass1 = em_fit(&t.observations, &init, &EmConfig { free_params: FreeParams::of(&[ModelParam::R]), ..cfg.em }).unwrap();
        assert_eq!(r.fitted.r, pass1.fitted.r);
        assert_eq!(r.fitted.a, init.a);
        assert_eq!(r.fitted.c, init.c);
        assert!(r.encoder_train_loss.is_some());
    }

    #[test]
    fn suite_yields_one_report_per_method_deterministically() {
        let truth = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let init = robot_model_from(0.01, RobotParams::INITIAL_GUESS).unwrap();
        let t = truth.simulate(40, 1).unwrap();
        let cfg = PipelineConfig {
            lstm: LstmConfig { epochs: 2, ..LstmConfig::default() },
            transformer: TransformerConfig { model_dim: 8, heads: 2, blocks: 1, epochs: 2, ..TransformerConfig::desk() },
            ..PipelineConfig::default()
        };
        let a = run_suite(&t, &init, &cfg, &MethodKind::ALL);
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        assert_eq!(a.reports.len(), 5);
        let b = run_suite(&t, &init, &cfg, &MethodKind::ALL);
        for (x, y) in a.reports.iter().zip(&b.reports) {
            assert_eq!(x.method, y.method);
            assert_eq!(x.fitted, y.fitted);
            assert_eq!(x.filter_mse, y.filter_mse);
            assert_eq!(x.smoother_mse, y.smoother_mse);
        }
    }

    #[test]
    fn failing_method_does_not_stop_the_suite() {
        let truth = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let t = truth.simulate(30, 1).unwrap();
        let cfg = PipelineConfig { lstm: LstmConfig { look_back: 40, ..LstmConfig::default() }, ..PipelineConfig::default() };
        let res = run_suite(&t, &truth, &cfg, &[MethodKind::Kf, MethodKind::LstmKf, MethodKind::EmKf]);
        assert_eq!(res.reports.len(), 2);
        assert_eq!(res.failures.len(), 1);
        assert_eq!(res.failures[0].method(), MethodKind::LstmKf);
    }
}
