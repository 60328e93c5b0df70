//! Forward Kalman filter and Rauch–Tung–Striebel smoother.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{gaussian_log_density, Mat, NumericsError, Vector};
use crate::statespace::LinearGaussianModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KalmanError {
    #[error("innovation covariance at step {step} is not positive definite: {source}")]
    DegenerateInnovation {
        step: usize,
        #[source]
        source: NumericsError,
    },
    #[error("predicted covariance P({step}|{prev}) cannot be inverted: {source}", prev = step - 1)]
    SingularPrediction {
        step: usize,
        #[source]
        source: NumericsError,
    },
    #[error("observation {step} has dimension {got}, model expects {expected}")]
    ObservationShape { step: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Mat,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: Mat) -> Self {
        assert_eq!(
            cov.shape(),
            (mean.len(), mean.len()),
            "belief covariance {:?} does not match mean length {}",
            cov.shape(),
            mean.len()
        );
        GaussianBelief { mean, cov }
    }

    pub fn prior(model: &LinearGaussianModel) -> Self {
        GaussianBelief::new(model.m0.clone(), model.p0.clone())
    }
}

/// Result of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStep {
    pub belief: GaussianBelief,
    /// Kalman gain `H_k`.
    pub gain: Mat,
    /// `r_k = y_k - C m_{k|k-1}`.
    pub innovation: Vector,
    /// `log N(r_k | 0, S_k)`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// `(m_{k|k-1}, P_{k|k-1})` for `k = 1..N`, stored at index `k - 1`.
    pub predicted: Vec<GaussianBelief>,
    /// `(m_{k|k}, P_{k|k})` for `k = 0..N`; index 0 is the prior.
    pub filtered: Vec<GaussianBelief>,
    pub gains: Vec<Mat>,
    pub innovations: Vec<Vector>,
    /// `log p(y_1:N | θ)` accumulated from the innovations.
    pub log_likelihood: f64,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn means(&self) -> Vec<Vector> {
        self.filtered.iter().map(|b| b.mean.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherResult {
    /// `(m_{k|N}, P_{k|N})` for `k = 0..N`.
    pub smoothed: Vec<GaussianBelief>,
    /// Smoother gains `J_k`, `k = 0..N-1`.
    pub gains: Vec<Mat>,
    /// `Cov(x_{k+1}, x_k | y_1:N) = P_{k+1|N} J_kᵀ`, `k = 0..N-1`.
    pub lag_one_cov: Vec<Mat>,
}

impl SmootherResult {
    pub fn means(&self) -> Vec<Vector> {
        self.smoothed.iter().map(|b| b.mean.clone()).collect()
    }
}

/// `m ← A m`, `P ← A P Aᵀ + Q`.
pub fn predict(model: &LinearGaussianModel, belief: &GaussianBelief) -> GaussianBelief {
    let mean = model.a.mat_vec(&belief.mean);
    let cov = model.a.matmul(&belief.cov).matmul_t(&model.a).add(&model.q).symmetrize();
    GaussianBelief { mean, cov }
}

/// Measurement update with gain `H = P Cᵀ (C P Cᵀ + R)⁻¹` and covariance
/// `(I - H C) P`, symmetrized.
pub fn update(model: &LinearGaussianModel, predicted: &GaussianBelief, y: &Vector) -> Result<UpdateStep, NumericsError> {
    let c = &model.c;
    let p = &predicted.cov;
    let innovation = y.sub(&c.mat_vec(&predicted.mean));
    let cp = c.matmul(p);
    let s = cp.matmul_t(c).add(&model.r).symmetrize();
    // H = P Cᵀ S⁻¹ = (S⁻¹ C P)ᵀ for symmetric P and S.
    let gain = s.solve_spd(&cp)?.transpose();
    let mean = predicted.mean.add(&gain.mat_vec(&innovation));
    let u = p.rows();
    let cov = Mat::identity(u).sub(&gain.matmul(c)).matmul(p).symmetrize();
    let log_likelihood = gaussian_log_density(&innovation, &Vector::zeros(innovation.len()), &s)?;
    Ok(UpdateStep { belief: GaussianBelief { mean, cov }, gain, innovation, log_likelihood })
}

/// Runs predict/update over `y_1..y_N` (`observations[k-1] = y_k`).
pub fn filter(model: &LinearGaussianModel, observations: &[Vector]) -> Result<FilterResult, KalmanError> {
    let n = observations.len();
    let mut predicted = Vec::with_capacity(n);
    let mut filtered = Vec::with_capacity(n + 1);
    let mut gains = Vec::with_capacity(n);
    let mut innovations = Vec::with_capacity(n);
    let mut log_likelihood = 0.0;
    filtered.push(GaussianBelief::prior(model));
    for (i, y) in observations.iter().enumerate() {
        let step = i + 1;
        if y.len() != model.obs_dim() {
            return Err(KalmanError::ObservationShape { step, got: y.len(), expected: model.obs_dim() });
        }
        let pred = predict(model, filtered.last().expect("prior pushed"));
        let upd = update(model, &pred, y).map_err(|source| KalmanError::DegenerateInnovation { step, source })?;
        log_likelihood += upd.log_likelihood;
        predicted.push(pred);
        filtered.push(upd.belief);
        gains.push(upd.gain);
        innovations.push(upd.innovation);
    }
    Ok(FilterResult { predicted, filtered, gains, innovations, log_likelihood })
}

/// Backward RTS pass over a complete filter run.
pub fn smooth(model: &LinearGaussianModel, filter: &FilterResult) -> Result<SmootherResult, KalmanError> {
    let n = filter.len();
    assert_eq!(filter.filtered.len(), n + 1, "filter result is incomplete");
    let mut smoothed = vec![filter.filtered[n].clone(); n + 1];
    let mut gains = vec![Mat::zeros(0, 0); n];
    let mut lag_one_cov = vec![Mat::zeros(0, 0); n];
    for k in (0..n).rev() {
        let filt = &filter.filtered[k];
        let pred = &filter.predicted[k]; // (m_{k+1|k}, P_{k+1|k})
        let next = &smoothed[k + 1];
        // J = P_{k|k} Aᵀ P_{k+1|k}⁻¹ = (P_{k+1|k}⁻¹ A P_{k|k})ᵀ
        let j = pred
            .cov
            .solve_spd(&model.a.matmul(&filt.cov))
            .map_err(|source| KalmanError::SingularPrediction { step: k + 1, source })?
            .transpose();
        let mean = filt.mean.add(&j.mat_vec(&next.mean.sub(&pred.mean)));
        let cov = filt.cov.add(&j.matmul(&next.cov.sub(&pred.cov)).matmul_t(&j)).symmetrize();
        lag_one_cov[k] = next.cov.matmul_t(&j);
        gains[k] = j;
        smoothed[k] = GaussianBelief { mean, cov };
    }
    Ok(SmootherResult { smoothed, gains, lag_one_cov })
}

/// Filter followed by smoother.
pub fn filter_and_smooth(model: &LinearGaussianModel, observations: &[Vector]) -> Result<(FilterResult, SmootherResult), KalmanError> {
    let f = filter(model, observations)?;
    let s = smooth(model, &f)?;
    Ok((f, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{random_small_model, JointGaussian};
    use crate::statespace::{robot_model_from, RobotParams};

    fn scalar_model(a: f64, c: f64, q: f64, r: f64, m0: f64, p0: f64) -> LinearGaussianModel {
        LinearGaussianModel::new(
            Mat::from_rows(&[[a]]),
            Mat::from_rows(&[[c]]),
            Mat::from_rows(&[[q]]),
            Mat::from_rows(&[[r]]),
            Vector::new(vec![m0]),
            Mat::from_rows(&[[p0]]),
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let mut m = scalar_model(1.0, 1.0, 0.0, 1.0, 0.0, 1.0);
        let b = GaussianBelief::new(Vector::new(vec![0.7]), Mat::from_rows(&[[0.3]]));
        assert_eq!(predict(&m, &b), b);

        m.q = Mat::from_rows(&[[1.0]]);
        let b = GaussianBelief::new(Vector::new(vec![0.0]), Mat::identity(1));
        assert_eq!(predict(&m, &b).cov, Mat::scaled_identity(1, 2.0));

        let m2 = scalar_model(2.0, 1.0, 0.5, 1.0, 0.0, 1.0);
        assert_eq!(predict(&m2, &b).cov, Mat::from_rows(&[[4.5]]));

        let m3 = LinearGaussianModel::new(
            Mat::identity(2),
            Mat::identity(2),
            Mat::identity(2),
            Mat::identity(2),
            Vector::zeros(2),
            Mat::identity(2),
        )
        .unwrap();
        let b = GaussianBelief::prior(&m3);
        assert_eq!(predict(&m3, &b).cov, Mat::scaled_identity(2, 2.0));
    }

    #[test]
    fn update_scalar_hand_computation() {
        let m = scalar_model(1.0, 1.0, 0.0, 1.0, 0.0, 1.0);
        let pred = GaussianBelief::new(Vector::new(vec![0.0]), Mat::identity(1));
        let u = update(&m, &pred, &Vector::new(vec![2.0])).unwrap();
        assert!((u.gain[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((u.belief.mean[0] - 1.0).abs() < 1e-15);
        assert!((u.belief.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(u.innovation, Vector::new(vec![2.0]));
        // log N(2 | 0, 2)
        let expected = -0.5 * (4.0 / 2.0 + (2.0 * 2.0 * std::f64::consts::PI).ln());
        assert!((u.log_likelihood - expected).abs() < 1e-14);
    }

    #[test]
    fn update_trusts_precise_observation() {
        let m = scalar_model(1.0, 1.0, 0.0, 1e-12, 0.0, 1.0);
        let pred = GaussianBelief::new(Vector::new(vec![-3.0]), Mat::identity(1));
        let u = update(&m, &pred, &Vector::new(vec![4.2])).unwrap();
        assert!((u.belief.mean[0] - 4.2).abs() < 1e-6);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let m = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let pred = GaussianBelief::new(Vector::new(vec![0.4, 1.0, -2.0]), Mat::scaled_identity(3, 0.2));
        let y = m.c.mat_vec(&pred.mean);
        let u = update(&m, &pred, &y).unwrap();
        assert_eq!(u.belief.mean, pred.mean);
        assert!(u.belief.cov.trace() < pred.cov.trace());
    }

    #[test]
    fn degenerate_innovation_is_reported_with_step() {
        let m = scalar_model(1.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let err = filter(&m, &[Vector::new(vec![1.0]), Vector::new(vec![1.0])]).unwrap_err();
        assert!(matches!(err, KalmanError::DegenerateInnovation { step: 1, .. }));
    }

    #[test]
    fn noise_free_fully_observed_system_is_tracked_exactly() {
        let a = Mat::from_rows(&[[0.9, 0.2], [-0.1, 0.95]]);
        let m = LinearGaussianModel::new(
            a.clone(),
            Mat::identity(2),
            Mat::zeros(2, 2),
            Mat::scaled_identity(2, 1e-12),
            Vector::zeros(2),
            Mat::identity(2),
        )
        .unwrap();
        let mut x = Vector::new(vec![1.0, -1.0]);
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for _ in 0..20 {
            x = a.mat_vec(&x);
            ys.push(x.clone());
            xs.push(x.clone());
        }
        let f = filter(&m, &ys).unwrap();
        for (k, truth) in xs.iter().enumerate() {
            assert!(f.filtered[k + 1].mean.max_abs_diff(truth) < 1e-6);
        }
    }

    #[test]
    fn filter_and_smoother_match_joint_gaussian_conditioning() {
        let mut rng = crate::numerics::rng_from_seed(42);
        let (model, obs) = random_small_model(&mut rng, 3, 2, 5);
        let joint = JointGaussian::new(&model, obs.len());
        let (f, s) = filter_and_smooth(&model, &obs).unwrap();
        for k in 0..=obs.len() {
            let b = joint.filtered(k, &obs).unwrap();
            assert!(f.filtered[k].mean.max_abs_diff(&b.mean) < 1e-8);
            assert!(f.filtered[k].cov.max_abs_diff(&b.cov) < 1e-8);
            let b = joint.smoothed(k, &obs).unwrap();
            assert!(s.smoothed[k].mean.max_abs_diff(&b.mean) < 1e-8);
            assert!(s.smoothed[k].cov.max_abs_diff(&b.cov) < 1e-8);
        }
        for k in 0..obs.len() {
            let c = joint.smoothed_cross_cov(k + 1, k, &obs).unwrap();
            assert!(s.lag_one_cov[k].max_abs_diff(&c) < 1e-8);
        }
        let ll = joint.log_marginal(&obs).unwrap();
        assert!((f.log_likelihood - ll).abs() < 1e-6);
    }

    #[test]
    fn smoother_properties_on_robot_run() {
        let m = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let t = m.simulate(200, 3).unwrap();
        let (f, s) = filter_and_smooth(&m, &t.observations).unwrap();
        assert_eq!(s.smoothed[200], f.filtered[200]);
        for k in 0..=200 {
            assert!(s.smoothed[k].cov.trace() <= f.filtered[k].cov.trace() + 1e-10);
            for cov in [&s.smoothed[k].cov, &f.filtered[k].cov] {
                assert!(cov.asymmetry() <= 1e-9);
                assert!(cov.symmetric_eigenvalues()[0] >= -1e-9);
            }
        }
        assert_eq!(f.predicted.len(), 200);
        assert_eq!(f.gains.len(), 200);
        assert_eq!(f.innovations.len(), 200);
        assert_eq!(s.lag_one_cov.len(), 200);
    }

    #[test]
    fn filter_mse_is_in_the_expected_range() {
        let m = robot_model_from(0.01, RobotParams::TRUE).unwrap();
        let mut total = 0.0;
        for seed in 0..5 {
            let t = m.simulate(200, seed).unwrap();
            let f = filter(&m, &t.observations).unwrap();
            total += (1..=200).map(|k| (f.filtered[k].mean[0] - t.states[k][0]).powi(2)).sum::<f64>() / 200.0;
        }
        let mse = total / 5.0;
        assert!(mse > 1e-3 && mse < 3e-2, "filter MSE {mse}");
    }
}
