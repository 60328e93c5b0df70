//! Expectation-maximization for linear-Gaussian state-space models.
//!
//! Each iteration runs the filter and smoother under the current parameters
//! (E-step), turns the smoothed moments into sufficient statistics and
//! applies the closed-form maximizers for the free parameters (M-step).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{filter_and_smooth, KalmanError, SmootherResult};
use crate::numerics::{Mat, Vector};
use crate::statespace::LinearGaussianModel;

#[derive(Debug, Error)]
pub enum EmError {
    #[error("E-step failed at iteration {iteration}: {source}")]
    EStep {
        iteration: usize,
        history: Vec<f64>,
        #[source]
        source: KalmanError,
    },
    #[error("normal equations for {param} are singular")]
    SingularNormalEquations { param: ModelParam },
    #[error("{param} update needs at least {needed} observations, got {got}")]
    TooShort { param: ModelParam, needed: usize, got: usize },
    #[error("statistics cover {stats} steps but {observations} observations were given")]
    LengthMismatch { stats: usize, observations: usize },
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelParam {
    A,
    C,
    Q,
    R,
    #[serde(rename = "m0")]
    M0,
    P0,
}

impl ModelParam {
    pub const ALL: [ModelParam; 6] = [ModelParam::A, ModelParam::C, ModelParam::Q, ModelParam::R, ModelParam::M0, ModelParam::P0];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ModelParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelParam::A => "A",
            ModelParam::C => "C",
            ModelParam::Q => "Q",
            ModelParam::R => "R",
            ModelParam::M0 => "m0",
            ModelParam::P0 => "P0",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelParam::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model parameter {s:?}"))
    }
}

/// Subset of `{A, C, Q, R, m0, P0}` that the M-step may change.
#[derive(Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<ModelParam>", from = "Vec<ModelParam>")]
pub struct FreeParams(u8);

impl FreeParams {
    pub const NONE: FreeParams = FreeParams(0);

    pub fn of(params: &[ModelParam]) -> FreeParams {
        params.iter().fold(FreeParams::NONE, |s, p| s.with(*p))
    }

    /// `{Q, R, m0, P0}`: everything except the structural matrices.
    pub fn noise_and_prior() -> FreeParams {
        FreeParams::of(&[ModelParam::Q, ModelParam::R, ModelParam::M0, ModelParam::P0])
    }

    pub fn with(self, p: ModelParam) -> FreeParams {
        FreeParams(self.0 | p.bit())
    }

    pub fn without(self, p: ModelParam) -> FreeParams {
        FreeParams(self.0 & !p.bit())
    }

    pub fn contains(self, p: ModelParam) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ModelParam> {
        ModelParam::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Debug for FreeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl From<FreeParams> for Vec<ModelParam> {
    fn from(s: FreeParams) -> Self {
        s.iter().collect()
    }
}

impl From<Vec<ModelParam>> for FreeParams {
    fn from(v: Vec<ModelParam>) -> Self {
        FreeParams::of(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the largest entrywise change over the free parameters
    /// drops below this.
    pub tol: f64,
    pub free_params: FreeParams,
    /// Constrain `Q`, `R`, `P0` to `(trace / order) I` and `m0` to
    /// `(0, …, 0, m0[last])` after every M-step.
    pub structural_projection: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 10, tol: 1e-9, free_params: FreeParams::noise_and_prior(), structural_projection: true }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), EmError> {
        if self.max_iter == 0 {
            return Err(EmError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(EmError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Smoothed moments consumed by the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `E[x_k]`, `k = 0..N`.
    pub ex: Vec<Vector>,
    /// `E[x_k x_kᵀ] = P_{k|N} + m_{k|N} m_{k|N}ᵀ`, `k = 0..N`.
    pub exx: Vec<Mat>,
    /// `E[x_{k+1} x_kᵀ] = Cov(x_{k+1}, x_k) + m_{k+1|N} m_{k|N}ᵀ`, `k = 0..N-1`.
    pub exx1: Vec<Mat>,
}

impl SufficientStats {
    /// Number of observed steps `N`.
    pub fn len(&self) -> usize {
        self.exx1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exx1.is_empty()
    }
}

pub fn collect_stats(smoother: &SmootherResult) -> SufficientStats {
    let s = &smoother.smoothed;
    let ex: Vec<Vector> = s.iter().map(|b| b.mean.clone()).collect();
    let exx = s.iter().map(|b| b.cov.add(&b.mean.outer(&b.mean)).symmetrize()).collect();
    let exx1 = smoother
        .lag_one_cov
        .iter()
        .enumerate()
        .map(|(k, c)| c.add(&ex[k + 1].outer(&ex[k])))
        .collect();
    SufficientStats { ex, exx, exx1 }
}

/// `(trace(M) / order) I`.
pub fn isotropic_projection(m: &Mat) -> Mat {
    Mat::scaled_identity(m.rows(), m.trace() / m.rows() as f64)
}

/// Applies the structural constraints to the free parameters of `model`.
pub fn project_model(model: &LinearGaussianModel, free: FreeParams) -> LinearGaussianModel {
    let mut out = model.clone();
    if free.contains(ModelParam::Q) {
        out.q = isotropic_projection(&model.q);
    }
    if free.contains(ModelParam::R) {
        out.r = isotropic_projection(&model.r);
    }
    if free.contains(ModelParam::P0) {
        out.p0 = isotropic_projection(&model.p0);
    }
    if free.contains(ModelParam::M0) {
        let u = model.m0.len();
        let mut m0 = Vector::zeros(u);
        m0[u - 1] = model.m0[u - 1];
        out.m0 = m0;
    }
    out
}

fn sum_mats<'a>(it: impl Iterator<Item = &'a Mat>, rows: usize, cols: usize) -> Mat {
    it.fold(Mat::zeros(rows, cols), |mut acc, m| {
        acc += m;
        acc
    })
}

/// `num · den⁻¹` for symmetric positive definite `den`.
fn right_divide(num: &Mat, den: &Mat, param: ModelParam) -> Result<Mat, EmError> {
    den.symmetrize()
        .solve_spd(&num.transpose())
        .map(|x| x.transpose())
        .map_err(|_| EmError::SingularNormalEquations { param })
}

/// Closed-form maximizers for every parameter in `config.free_params`.
///
/// Index conventions (`x_0..x_N` smoothed, `y_1..y_N` observed):
/// `A` pairs `(x_k, x_{k-1})` for `k = 1..N-1`; `Q` averages the same
/// `N-1` transitions `(x_{k+1}, x_k)`, `k = 0..N-2`, with weight
/// `1/(N-1)`; `C` and `R` pair each observation `y_k` with `x_k`,
/// `k = 1..N`. `Q`, `R` and `P0` use the freshly updated `A`, `C`, `m0`.
pub fn m_step(
    stats: &SufficientStats,
    observations: &[Vector],
    current: &LinearGaussianModel,
    config: &EmConfig,
) -> Result<LinearGaussianModel, EmError> {
    let n = stats.len();
    if n != observations.len() {
        return Err(EmError::LengthMismatch { stats: n, observations: observations.len() });
    }
    let free = config.free_params;
    let (u, v) = (current.state_dim(), current.obs_dim());
    let mut next = current.clone();

    if free.contains(ModelParam::A) {
        if n < 2 {
            return Err(EmError::TooShort { param: ModelParam::A, needed: 2, got: n });
        }
        let num = sum_mats(stats.exx1[..n - 1].iter(), u, u);
        let den = sum_mats(stats.exx[..n - 1].iter(), u, u);
        next.a = right_divide(&num, &den, ModelParam::A)?;
    }
    if free.contains(ModelParam::C) {
        let mut num = Mat::zeros(v, u);
        for k in 1..=n {
            num += &observations[k - 1].outer(&stats.ex[k]);
        }
        let den = sum_mats(stats.exx[1..].iter(), u, u);
        next.c = right_divide(&num, &den, ModelParam::C)?;
    }
    if free.contains(ModelParam::M0) {
        next.m0 = stats.ex[0].clone();
    }
    if free.contains(ModelParam::Q) {
        if n < 2 {
            return Err(EmError::TooShort { param: ModelParam::Q, needed: 2, got: n });
        }
        let a = &next.a;
        let mut acc = Mat::zeros(u, u);
        for k in 0..n - 1 {
            // E[(x_{k+1} - A x_k)(x_{k+1} - A x_k)ᵀ]
            let cross = a.matmul_t(&stats.exx1[k]); // A E[x_k x_{k+1}ᵀ]
            acc += &stats.exx[k + 1];
            acc = acc.sub(&cross).sub(&cross.transpose());
            acc += &a.matmul(&stats.exx[k]).matmul_t(a);
        }
        next.q = acc.scale(1.0 / (n - 1) as f64).symmetrize();
    }
    if free.contains(ModelParam::R) {
        let c = &next.c;
        let mut acc = Mat::zeros(v, v);
        for k in 1..=n {
            let y = &observations[k - 1];
            // E[(y_k - C x_k)(y_k - C x_k)ᵀ]
            let cy = c.mat_vec(&stats.ex[k]).outer(y);
            acc += &y.outer(y);
            acc = acc.sub(&cy).sub(&cy.transpose());
            acc += &c.matmul(&stats.exx[k]).matmul_t(c);
        }
        next.r = acc.scale(1.0 / n as f64).symmetrize();
    }
    if free.contains(ModelParam::P0) {
        let m0 = &next.m0;
        let ex0 = &stats.ex[0];
        next.p0 = stats.exx[0]
            .sub(&m0.outer(ex0))
            .sub(&ex0.outer(m0))
            .add(&m0.outer(m0))
            .symmetrize();
    }
    if config.structural_projection {
        next = project_model(&next, free);
    }
    Ok(next)
}

/// Largest absolute entrywise change over the free parameters.
pub fn parameter_change(a: &LinearGaussianModel, b: &LinearGaussianModel, free: FreeParams) -> f64 {
    free.iter()
        .map(|p| match p {
            ModelParam::A => a.a.max_abs_diff(&b.a),
            ModelParam::C => a.c.max_abs_diff(&b.c),
            ModelParam::Q => a.q.max_abs_diff(&b.q),
            ModelParam::R => a.r.max_abs_diff(&b.r),
            ModelParam::M0 => a.m0.max_abs_diff(&b.m0),
            ModelParam::P0 => a.p0.max_abs_diff(&b.p0),
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub fitted: LinearGaussianModel,
    /// Log-likelihood of each E-step, under the parameters entering it.
    pub loglik_history: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl EmReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn em_fit(observations: &[Vector], init: &LinearGaussianModel, config: &EmConfig) -> Result<EmReport, EmError> {
    config.validate()?;
    let mut theta = init.clone();
    let mut history = Vec::with_capacity(config.max_iter);
    let mut converged = false;
    for iteration in 1..=config.max_iter {
        let (f, s) = filter_and_smooth(&theta, observations).map_err(|source| EmError::EStep {
            iteration,
            history: history.clone(),
            source,
        })?;
        history.push(f.log_likelihood);
        let stats = collect_stats(&s);
        let next = m_step(&stats, observations, &theta, config)?;
        let change = parameter_change(&theta, &next, config.free_params);
        theta = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EmReport { fitted: theta, iterations_run: history.len(), loglik_history: history, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::filter_and_smooth;
    use crate::numerics::rng_from_seed;
    use crate::oracle::{random_small_model, JointGaussian};
    use crate::statespace::{robot_model_from, RobotParams};

    fn robot(p: RobotParams) -> LinearGaussianModel {
        robot_model_from(0.01, p).unwrap()
    }

    #[test]
    fn free_params_round_trip() {
        let s = FreeParams::noise_and_prior();
        assert!(s.contains(ModelParam::Q) && !s.contains(ModelParam::A));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"["Q","R","m0","P0"]"#);
        let back: FreeParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!("p0".parse::<ModelParam>().unwrap(), ModelParam::P0);
    }

    #[test]
    fn degenerate_smoother_gives_outer_products() {
        let mut rng = rng_from_seed(4);
        let (model, obs) = random_small_model(&mut rng, 2, 1, 4);
        let (_, mut s) = filter_and_smooth(&model, &obs).unwrap();
        for b in &mut s.smoothed {
            b.cov = Mat::zeros(2, 2);
        }
        for c in &mut s.lag_one_cov {
            *c = Mat::zeros(2, 2);
        }
        let st = collect_stats(&s);
        for (k, b) in s.smoothed.iter().enumerate() {
            assert_eq!(st.exx[k], b.mean.outer(&b.mean));
        }
    }

    #[test]
    fn cross_moments_match_joint_oracle() {
        let mut rng = rng_from_seed(21);
        let (model, obs) = random_small_model(&mut rng, 3, 2, 5);
        let (_, s) = filter_and_smooth(&model, &obs).unwrap();
        let st = collect_stats(&s);
        let joint = JointGaussian::new(&model, 5);
        for k in 0..5 {
            let cov = joint.smoothed_cross_cov(k + 1, k, &obs).unwrap();
            let m1 = joint.smoothed(k + 1, &obs).unwrap().mean;
            let m0 = joint.smoothed(k, &obs).unwrap().mean;
            let expected = cov.add(&m1.outer(&m0));
            assert!(st.exx1[k].max_abs_diff(&expected) < 1e-8);
        }
        for m in &st.exx {
            assert_eq!(m.clone(), m.t());
        }
        assert_eq!(st.ex.len(), 6);
        assert_eq!(st.exx.len(), 6);
        assert_eq!(st.exx1.len(), 5);
    }

    #[test]
    fn projection_of_diagonal_covariance() {
        assert_eq!(isotropic_projection(&Mat::diag(&[2.0, 4.0, 6.0])), Mat::scaled_identity(3, 4.0));
    }

    #[test]
    fn projection_is_idempotent() {
        let mut m = robot(RobotParams::TRUE);
        m.q = Mat::from_rows(&[[1.0, 0.2, 0.0], [0.2, 2.0, 0.1], [0.0, 0.1, 0.5]]);
        m.m0 = Vector::new(vec![0.3, -0.2, 0.7]);
        let all = FreeParams::noise_and_prior();
        let once = project_model(&m, all);
        assert_eq!(project_model(&once, all), once);
        assert_eq!(once.m0, Vector::new(vec![0.0, 0.0, 0.7]));
    }

    #[test]
    fn empty_free_set_is_a_no_op() {
        let m = robot(RobotParams::INITIAL_GUESS);
        let t = robot(RobotParams::TRUE).simulate(50, 1).unwrap();
        let (_, s) = filter_and_smooth(&m, &t.observations).unwrap();
        let st = collect_stats(&s);
        let cfg = EmConfig { free_params: FreeParams::NONE, ..EmConfig::default() };
        assert_eq!(m_step(&st, &t.observations, &m, &cfg).unwrap(), m);
    }

    #[test]
    fn m0_update_is_the_smoothed_initial_mean() {
        let mut rng = rng_from_seed(12);
        let (model, obs) = random_small_model(&mut rng, 3, 2, 6);
        let (_, s) = filter_and_smooth(&model, &obs).unwrap();
        let cfg = EmConfig { free_params: FreeParams::of(&[ModelParam::M0]), structural_projection: false, ..Default::default() };
        let next = m_step(&collect_stats(&s), &obs, &model, &cfg).unwrap();
        assert_eq!(next.m0, s.smoothed[0].mean);
    }

    #[test]
    fn one_step_from_truth_keeps_r_near_truth() {
        let truth = robot(RobotParams::TRUE);
        let t = truth.simulate(2000, 17).unwrap();
        let (_, s) = filter_and_smooth(&truth, &t.observations).unwrap();
        let cfg = EmConfig { free_params: FreeParams::of(&[ModelParam::R]), structural_projection: false, ..Default::default() };
        let next = m_step(&collect_stats(&s), &t.observations, &truth, &cfg).unwrap();
        let r = next.r[(0, 0)];
        assert!((r - 5e-3).abs() < 0.25 * 5e-3, "R after one step: {r}");
    }

    #[test]
    fn a_and_c_updates_recover_structure_on_long_runs() {
        let truth = robot(RobotParams::TRUE);
        let t = truth.simulate(2000, 3).unwrap();
        let (_, s) = filter_and_smooth(&truth, &t.observations).unwrap();
        let cfg = EmConfig {
            free_params: FreeParams::of(&[ModelParam::C]),
            structural_projection: false,
            ..Default::default()
        };
        let next = m_step(&collect_stats(&s), &t.observations, &truth, &cfg).unwrap();
        assert!(next.c.max_abs_diff(&truth.c) < 0.05, "{:?}", next.c);
        let cfg = EmConfig { free_params: FreeParams::of(&[ModelParam::A]), ..cfg };
        let next = m_step(&collect_stats(&s), &t.observations, &truth, &cfg).unwrap();
        assert!(next.a.is_finite());
        assert!((next.a[(0, 0)] - 1.0).abs() < 0.05);
    }

    #[test]
    fn short_sequences_are_rejected_for_transition_updates() {
        let m = robot(RobotParams::TRUE);
        let obs = vec![Vector::new(vec![0.1])];
        let (_, s) = filter_and_smooth(&m, &obs).unwrap();
        let cfg = EmConfig { free_params: FreeParams::of(&[ModelParam::Q]), ..Default::default() };
        assert!(matches!(m_step(&collect_stats(&s), &obs, &m, &cfg), Err(EmError::TooShort { .. })));
        let err = m_step(&collect_stats(&s), &[], &m, &cfg).unwrap_err();
        assert!(matches!(err, EmError::LengthMismatch { .. }));
    }

    #[test]
    fn ascent_with_r_free_from_true_values() {
        let truth = robot(RobotParams::TRUE);
        let t = truth.simulate(200, 8).unwrap();
        let cfg = EmConfig { free_params: FreeParams::of(&[ModelParam::R]), structural_projection: false, ..Default::default() };
        let rep = em_fit(&t.observations, &truth, &cfg).unwrap();
        for w in rep.loglik_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", rep.loglik_history);
        }
    }

    #[test]
    fn single_iteration_contract() {
        let t = robot(RobotParams::TRUE).simulate(100, 2).unwrap();
        let cfg = EmConfig { max_iter: 1, ..Default::default() };
        let rep = em_fit(&t.observations, &robot(RobotParams::INITIAL_GUESS), &cfg).unwrap();
        assert_eq!(rep.iterations_run, 1);
        assert_eq!(rep.loglik_history.len(), 1);
        assert!(!rep.converged);
    }

    #[test]
    fn converges_immediately_when_nothing_is_free() {
        let t = robot(RobotParams::TRUE).simulate(30, 2).unwrap();
        let cfg = EmConfig { free_params: FreeParams::NONE, ..Default::default() };
        let rep = em_fit(&t.observations, &robot(RobotParams::TRUE), &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations_run, 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let t = robot(RobotParams::TRUE).simulate(10, 2).unwrap();
        let m = robot(RobotParams::TRUE);
        assert!(em_fit(&t.observations, &m, &EmConfig { max_iter: 0, ..Default::default() }).is_err());
        assert!(em_fit(&t.observations, &m, &EmConfig { tol: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn e_step_failure_carries_iteration_and_history() {
        let mut m = robot(RobotParams::TRUE);
        m.r = Mat::zeros(1, 1);
        m.p0 = Mat::zeros(3, 3);
        m.q = Mat::zeros(3, 3);
        let obs = vec![Vector::new(vec![0.0]); 5];
        match em_fit(&obs, &m, &EmConfig::default()) {
            Err(EmError::EStep { iteration: 1, history, .. }) => assert!(history.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn benchmark_protocol_recovers_observation_noise_scale() {
        let truth = robot(RobotParams::TRUE);
        let t = truth.simulate(200, 0).unwrap();
        let rep = em_fit(&t.observations, &robot(RobotParams::INITIAL_GUESS), &EmConfig::default()).unwrap();
        let r = rep.fitted.r[(0, 0)];
        assert!((1e-3..=2e-2).contains(&r), "sigma_r^2 = {r}");
        assert_eq!(rep.iterations_run, 10);
        let json = rep.to_json();
        let back: EmReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
