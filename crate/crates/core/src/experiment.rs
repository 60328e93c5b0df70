//! Configuration, seeded orchestration and CSV output for the benchmark.
//!
//! Configuration is TOML. Every key is optional; absent keys take the
//! defaults of the robot experiment. The resolved configuration is written
//! next to the results so a run can be repeated from its output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::EmConfig;
use crate::encoders::{LstmConfig, TransformerConfig};
use crate::neural::AdamConfig;
use crate::pipeline::{run_method_with, run_suite_with, EncoderCache, FinalFilterInput, MethodKind, MethodReport, ParamSummary, PipelineConfig};
use crate::statespace::{robot_model_from, ModelError, RobotParams, Trajectory};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `model_dim` 32, 100 transformer epochs.
    #[default]
    Desk,
    /// `model_dim` 512, 500 transformer epochs.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile {s:?} (expected desk or paper)")),
        }
    }
}

/// Transformer settings; `model_dim` and `epochs` fall back to the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    pub model_dim: Option<usize>,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: Option<usize>,
    pub dropout_rate: f64,
    pub epochs: Option<usize>,
    pub train_fraction: f64,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TransformerSection {
    fn default() -> Self {
        let d = TransformerConfig::default();
        TransformerSection {
            model_dim: None,
            heads: d.heads,
            blocks: d.blocks,
            ffn_hidden: d.ffn_hidden,
            dropout_rate: d.dropout_rate,
            epochs: None,
            train_fraction: d.train_fraction,
            clip_norm: d.clip_norm,
            adam: d.adam,
            seed: 1,
        }
    }
}

impl TransformerSection {
    pub fn resolve(&self, profile: Profile) -> TransformerConfig {
        let base = match profile {
            Profile::Desk => TransformerConfig::desk(),
            Profile::Paper => TransformerConfig::default(),
        };
        TransformerConfig {
            model_dim: self.model_dim.unwrap_or(base.model_dim),
            heads: self.heads,
            blocks: self.blocks,
            ffn_hidden: self.ffn_hidden,
            dropout_rate: self.dropout_rate,
            epochs: self.epochs.unwrap_or(base.epochs),
            train_fraction: self.train_fraction,
            clip_norm: self.clip_norm,
            adam: self.adam,
            seed: self.seed,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Sampling period `T` in seconds.
    pub sample_period: f64,
    /// Number of observations per trajectory.
    pub n: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodKind>,
    pub output_dir: PathBuf,
    pub profile: Profile,
    pub final_filter: FinalFilterInput,
    /// Initial `(m_a, σ_p²)` pairs of the robustness table.
    pub robustness_settings: Vec<[f64; 2]>,
    pub true_params: RobotParams,
    pub init_params: RobotParams,
    pub em: EmConfig,
    pub lstm: LstmConfig,
    pub transformer: TransformerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sample_period: 0.01,
            n: 200,
            seeds: default_seeds(),
            methods: MethodKind::ALL.to_vec(),
            output_dir: PathBuf::from("results"),
            profile: Profile::Desk,
            final_filter: FinalFilterInput::Raw,
            robustness_settings: vec![[1.0, 5.0], [0.5, 1.0], [1.5, 15.0]],
            true_params: RobotParams::TRUE,
            init_params: RobotParams::INITIAL_GUESS,
            em: EmConfig::default(),
            lstm: LstmConfig { seed: 2, ..LstmConfig::default() },
            transformer: TransformerSection::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Fills profile-dependent values so the config is self-describing.
    pub fn resolved(&self) -> ExperimentConfig {
        let t = self.transformer.resolve(self.profile);
        let mut out = self.clone();
        out.transformer.model_dim = Some(t.model_dim);
        out.transformer.epochs = Some(t.epochs);
        out
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        self.transformer.resolve(self.profile)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(invalid("sample_period", "must be positive"));
        }
        for (section, p) in [("true_params", &self.true_params), ("init_params", &self.init_params)] {
            for (name, v) in [("q_var", p.q_var), ("r_var", p.r_var), ("p_var", p.p_var)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(&format!("{section}.{name}"), format!("variance must be positive, got {v}")));
                }
            }
            if !p.m_a.is_finite() {
                return Err(invalid(&format!("{section}.m_a"), "must be finite"));
            }
        }
        if self.n < self.lstm.look_back + 2 {
            return Err(invalid("n", format!("must be at least lstm.look_back + 2 = {}", self.lstm.look_back + 2)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        let mut m = self.methods.clone();
        m.sort_unstable();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(invalid("methods", "methods must be distinct"));
        }
        for (i, [m_a, p]) in self.robustness_settings.iter().enumerate() {
            if !m_a.is_finite() || !(*p > 0.0 && p.is_finite()) {
                return Err(invalid(&format!("robustness_settings[{i}]"), "needs a finite m_a and a positive variance"));
            }
        }
        self.em.validate().map_err(|e| invalid("em", e.to_string()))?;
        self.lstm.validate().map_err(|e| invalid("lstm", e.to_string()))?;
        self.transformer_config().validate().map_err(|e| invalid("transformer", e.to_string()))?;
        Ok(())
    }

    /// Encoder configuration for one run seed.
    pub fn pipeline_config(&self, run_seed: u64) -> PipelineConfig {
        let mut lstm = self.lstm.clone();
        lstm.seed = derive_seed(self.lstm.seed, run_seed);
        let mut transformer = self.transformer_config();
        transformer.seed = derive_seed(transformer.seed, run_seed);
        PipelineConfig { em: self.em, lstm, transformer, final_filter: self.final_filter }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Parses TOML text; absent keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse_config(&text)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for an encoder, keyed by its base seed and the run seed.
pub fn derive_seed(base: u64, run_seed: u64) -> u64 {
    mix(base ^ mix(run_seed))
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Model(#[from] ModelError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One fit of the robustness table.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessRun {
    pub method: MethodKind,
    pub initial_m_a: f64,
    pub initial_sigma_p2: f64,
    pub seed: u64,
    pub summary: ParamSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageFailure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Default, Serialize)]
pub struct ExperimentSummary {
    pub reports: Vec<MethodReport>,
    pub robustness: Vec<RobustnessRun>,
    pub failures: Vec<StageFailure>,
    pub files: Vec<PathBuf>,
}

impl ExperimentSummary {
    pub fn reports_for(&self, kind: MethodKind) -> impl Iterator<Item = &MethodReport> {
        self.reports.iter().filter(move |r| r.method == kind)
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

struct SeedOutcome {
    trajectory: Trajectory,
    reports: Vec<MethodReport>,
    robustness: Vec<RobustnessRun>,
    failures: Vec<StageFailure>,
}

fn robustness_methods(cfg: &ExperimentConfig) -> Vec<MethodKind> {
    if cfg.robustness_settings.is_empty() {
        return Vec::new();
    }
    [MethodKind::EmKf, MethodKind::TlKf].into_iter().filter(|m| cfg.methods.contains(m)).collect()
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome, ExperimentError> {
    let truth = robot_model_from(cfg.sample_period, cfg.true_params)?;
    let init = robot_model_from(cfg.sample_period, cfg.init_params)?;
    let trajectory = truth.simulate(cfg.n, seed)?;
    let pcfg = cfg.pipeline_config(seed);
    let mut cache = EncoderCache::new();
    let suite = run_suite_with(&trajectory, &init, &pcfg, &cfg.methods, &mut cache);
    let mut failures: Vec<StageFailure> = suite
        .failures
        .iter()
        .map(|e| StageFailure { seed, stage: e.method().id().into(), message: e.to_string() })
        .collect();
    let mut robustness = Vec::new();
    for &[m_a, p_var] in &cfg.robustness_settings {
        let start = robot_model_from(cfg.sample_period, RobotParams { m_a, p_var, ..cfg.init_params })?;
        for kind in robustness_methods(cfg) {
            match run_method_with(kind, &trajectory, &start, &pcfg, &mut cache) {
                Ok(r) => robustness.push(RobustnessRun {
                    method: kind,
                    initial_m_a: m_a,
                    initial_sigma_p2: p_var,
                    seed,
                    summary: r.summary(),
                }),
                Err(e) => failures.push(StageFailure {
                    seed,
                    stage: format!("robustness {} (m_a={m_a}, p={p_var})", kind.id()),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(SeedOutcome { trajectory, reports: suite.reports, robustness, failures })
}

/// Sample mean and standard deviation (`None` with fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Rounded to 0.01 s.
fn secs(v: f64) -> String {
    format!("{:.2}", v)
}

struct CsvOut<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl CsvOut<'_> {
    fn write(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| ExperimentError::Write { path: path.clone(), source: e };
        let csv_err = |e: csv::Error| io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        self.files.push(path);
        Ok(())
    }
}

fn stat_cells(values: &[f64]) -> [String; 2] {
    let (m, s) = mean_std(values);
    [num(m), opt(s)]
}

fn write_outputs(cfg: &ExperimentConfig, outcomes: &[SeedOutcome], out: &mut CsvOut<'_>) -> Result<(), ExperimentError> {
    let by_method: BTreeMap<MethodKind, Vec<&MethodReport>> = cfg
        .methods
        .iter()
        .map(|m| (*m, outcomes.iter().flat_map(|o| o.reports.iter().filter(|r| r.method == *m)).collect()))
        .collect();
    let ordered = || cfg.methods.iter().map(|m| (*m, &by_method[m]));

    if cfg.methods.iter().any(|m| m.uses_em()) {
        let p = &cfg.true_params;
        let mut rows = vec![vec![
            "de facto".to_string(),
            num(p.q_var),
            String::new(),
            num(p.r_var),
            String::new(),
            num(p.m_a),
            String::new(),
            num(p.p_var),
            String::new(),
            String::new(),
        ]];
        for (m, rs) in ordered().filter(|(m, rs)| m.uses_em() && !rs.is_empty()) {
            let mut row = vec![m.label().to_string()];
            let fields: [fn(&MethodReport) -> f64; 4] = [|r| r.sigma_q2, |r| r.sigma_r2, |r| r.m_a, |r| r.sigma_p2];
            for f in fields {
                row.extend(stat_cells(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()));
            }
            row.push(rs.len().to_string());
            rows.push(row);
        }
        out.write(
            "table1.csv",
            &[
                "method", "sigma_q2_mean", "sigma_q2_std", "sigma_r2_mean", "sigma_r2_std", "m_a_mean", "m_a_std", "sigma_p2_mean",
                "sigma_p2_std", "runs",
            ],
            rows,
        )?;
    }

    let mut rows = Vec::new();
    for (m, rs) in ordered().filter(|(_, rs)| !rs.is_empty()) {
        let mut row = vec![m.label().to_string()];
        let timings: [fn(&MethodReport) -> f64; 2] = [|r| r.training_seconds, |r| r.em_seconds];
        for f in timings {
            let (mean, std) = mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            row.push(secs(mean));
            row.push(std.map(secs).unwrap_or_default());
        }
        let errors: [fn(&MethodReport) -> f64; 2] = [|r| r.filter_mse, |r| r.smoother_mse];
        for f in errors {
            row.extend(stat_cells(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()));
        }
        row.push(rs.len().to_string());
        rows.push(row);
    }
    out.write(
        "table2.csv",
        &[
            "method",
            "training_seconds_mean",
            "training_seconds_std",
            "em_seconds_mean",
            "em_seconds_std",
            "filter_mse_mean",
            "filter_mse_std",
            "smoother_mse_mean",
            "smoother_mse_std",
            "runs",
        ],
        rows,
    )?;

    let sweep = robustness_methods(cfg);
    if !sweep.is_empty() {
        let mut rows = Vec::new();
        for m in &sweep {
            for &[m_a, p_var] in &cfg.robustness_settings {
                let runs: Vec<&RobustnessRun> = outcomes
                    .iter()
                    .flat_map(|o| &o.robustness)
                    .filter(|r| r.method == *m && r.initial_m_a == m_a && r.initial_sigma_p2 == p_var)
                    .collect();
                if runs.is_empty() {
                    continue;
                }
                let mut row = vec![m.label().to_string(), num(m_a), num(p_var)];
                let fields: [fn(&ParamSummary) -> f64; 3] = [|s| s.sigma_q2, |s| s.m_a, |s| s.sigma_p2];
                for f in fields {
                    row.extend(stat_cells(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>()));
                }
                let err: Vec<f64> = runs.iter().map(|r| (r.summary.m_a - cfg.true_params.m_a).abs()).collect();
                row.push(num(median(&err)));
                row.push(runs.len().to_string());
                rows.push(row);
            }
        }
        out.write(
            "table3.csv",
            &[
                "method",
                "initial_m_a",
                "initial_sigma_p2",
                "sigma_q2_mean",
                "sigma_q2_std",
                "m_a_mean",
                "m_a_std",
                "sigma_p2_mean",
                "sigma_p2_std",
                "median_abs_m_a_error",
                "runs",
            ],
            rows,
        )?;
    }

    for (m, _) in ordered() {
        let mut path_rows = Vec::new();
        let mut err_rows = Vec::new();
        for o in outcomes {
            let Some(r) = o.reports.iter().find(|r| r.method == m) else { continue };
            for k in 1..o.trajectory.states.len() {
                let truth = o.trajectory.states[k][0];
                let (f, s) = (r.filtered_displacement[k], r.smoothed_displacement[k]);
                path_rows.push(vec![r.seed.to_string(), k.to_string(), num(truth), num(f), num(s)]);
                err_rows.push(vec![r.seed.to_string(), k.to_string(), num(f - truth), num(s - truth)]);
            }
        }
        out.write(&format!("path_{}.csv", m.id()), &["seed", "k", "true_displacement", "filtered", "smoothed"], path_rows)?;
        out.write(&format!("error_{}.csv", m.id()), &["seed", "k", "filter_error", "smoother_error"], err_rows)?;
    }
    Ok(())
}

/// Simulates every seed, runs the configured methods and the robustness
/// sweep, and writes all tables. Method failures are collected in the
/// summary; whatever succeeded is still written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    let cfg = config.resolved();
    let dir = cfg.output_dir.clone();
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Write { path, source }
    };
    std::fs::create_dir_all(&dir).map_err(write_err(&dir))?;
    let cfg_path = dir.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(write_err(&cfg_path))?;

    let outcomes: Vec<SeedOutcome> = cfg.seeds.par_iter().map(|s| run_seed(&cfg, *s)).collect::<Result<_, _>>()?;

    let mut out = CsvOut { dir: &dir, files: vec![cfg_path] };
    write_outputs(&cfg, &outcomes, &mut out)?;

    let mut summary = ExperimentSummary { files: Vec::new(), ..Default::default() };
    for o in outcomes {
        summary.reports.extend(o.reports);
        summary.robustness.extend(o.robustness);
        summary.failures.extend(o.failures);
    }
    let json_path = dir.join("reports.json");
    let json = serde_json::to_string_pretty(&summary.reports).expect("reports serialize");
    std::fs::write(&json_path, json).map_err(write_err(&json_path))?;
    out.files.push(json_path);
    summary.files = out.files;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_experiment_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.sample_period, 0.01);
        assert_eq!(cfg.true_params, RobotParams::TRUE);
        assert_eq!(cfg.init_params, RobotParams::INITIAL_GUESS);
        assert_eq!(cfg.em.max_iter, 10);
        assert_eq!(cfg.lstm.look_back, 5);
        let t = cfg.transformer_config();
        assert_eq!((t.model_dim, t.epochs, t.heads, t.blocks), (32, 100, 4, 6));
    }

    #[test]
    fn overrides_keep_other_defaults() {
        let cfg = parse_config("n = 50\n[lstm]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.n, 50);
        assert_eq!(cfg.lstm.epochs, 7);
        assert_eq!(cfg.lstm.hidden, 10);
        assert_eq!(ExperimentConfig { n: 200, lstm: ExperimentConfig::default().lstm, ..cfg }, ExperimentConfig::default());
    }

    #[test]
    fn paper_profile_switches_transformer_scale() {
        let cfg = parse_config("profile = \"paper\"").unwrap();
        let t = cfg.transformer_config();
        assert_eq!((t.model_dim, t.epochs), (512, 500));
        let cfg = parse_config("profile = \"paper\"\n[transformer]\nmodel_dim = 64\n").unwrap();
        assert_eq!(cfg.transformer_config().model_dim, 64);
    }

    #[test]
    fn invalid_values_name_their_field() {
        let cases = [
            ("[true_params]\nq_var = -1.0\nr_var = 5e-3\nm_a = 0.1\np_var = 0.1\n", "true_params.q_var"),
            ("n = 6\n", "n"),
            ("seeds = []\n", "seeds"),
            ("methods = [\"KF\", \"KF\"]\n", "methods"),
            ("[transformer]\nmodel_dim = 30\n", "transformer"),
        ];
        for (text, field) in cases {
            match parse_config(text) {
                Err(ConfigError::Invalid { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(parse_config("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config("n = \"x\""), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse_config("seeds = [3, 4]\nmethods = [\"KF\", \"TL_KF\"]\n").unwrap().resolved();
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.transformer.model_dim, Some(32));
    }

    #[test]
    fn derived_seeds_differ_by_run_and_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn statistics_helpers() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, Some(2f64.sqrt())));
        assert_eq!(mean_std(&[4.0]), (4.0, None));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn kf_only_run_writes_table2_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            n: 50,
            seeds: vec![0],
            methods: vec![MethodKind::Kf],
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&cfg).unwrap();
        assert!(summary.succeeded());
        let mut names: Vec<String> =
            std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["config.resolved.toml", "error_KF.csv", "path_KF.csv", "reports.json", "table2.csv"]);
        let path = std::fs::read_to_string(dir.path().join("path_KF.csv")).unwrap();
        assert_eq!(path.lines().count(), 51);
        assert_eq!(path.lines().next().unwrap(), "seed,k,true_displacement,filtered,smoothed");
    }
}
