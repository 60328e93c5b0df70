//! Brute-force reference for the filter and smoother.
//!
//! For short sequences the whole vector `(x_0..x_N, y_1..y_N)` is jointly
//! Gaussian, so every filtered or smoothed moment is plain Gaussian
//! conditioning on the full covariance. None of the recursions in
//! [`crate::kalman`] are used here.

use rand::Rng;
use serde::Serialize;

use crate::kalman::{filter_and_smooth, GaussianBelief, KalmanError};
use crate::numerics::{gaussian_log_density, Mat, NumericsError, SimRng, Vector};
use crate::statespace::LinearGaussianModel;

/// Joint mean and covariance of `(x_0..x_N, y_1..y_N)`.
pub struct JointGaussian {
    u: usize,
    v: usize,
    n: usize,
    mean: Vec<f64>,
    cov: Mat,
}

impl JointGaussian {
    pub fn new(model: &LinearGaussianModel, n: usize) -> Self {
        let (u, v) = (model.state_dim(), model.obs_dim());
        let dim = (n + 1) * u + n * v;

        // Cov(x_j, x_k) for all j, k.
        let mut sxx = vec![vec![Mat::zeros(u, u); n + 1]; n + 1];
        sxx[0][0] = model.p0.clone();
        for k in 1..=n {
            for j in 0..k {
                sxx[k][j] = model.a.matmul(&sxx[k - 1][j]);
                sxx[j][k] = sxx[k][j].transpose();
            }
            sxx[k][k] = model.a.matmul(&sxx[k - 1][k - 1]).matmul_t(&model.a).add(&model.q);
        }
        let mut state_means = vec![model.m0.clone()];
        for k in 1..=n {
            state_means.push(model.a.mat_vec(&state_means[k - 1]));
        }

        let xo = |k: usize| k * u;
        let yo = |k: usize| (n + 1) * u + (k - 1) * v;
        let mut cov = Mat::zeros(dim, dim);
        let mut put = |r0: usize, c0: usize, b: &Mat| {
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    cov[(r0 + i, c0 + j)] = b[(i, j)];
                }
            }
        };
        for j in 0..=n {
            for k in 0..=n {
                put(xo(j), xo(k), &sxx[j][k]);
            }
        }
        for k in 1..=n {
            for j in 0..=n {
                let yx = model.c.matmul(&sxx[k][j]);
                put(yo(k), xo(j), &yx);
                put(xo(j), yo(k), &yx.transpose());
            }
            for j in 1..=n {
                let mut yy = model.c.matmul(&sxx[k][j]).matmul_t(&model.c);
                if j == k {
                    yy = yy.add(&model.r);
                }
                put(yo(k), yo(j), &yy);
            }
        }

        let mut mean = Vec::with_capacity(dim);
        for m in &state_means {
            mean.extend_from_slice(m.as_slice());
        }
        for m in &state_means[1..] {
            mean.extend_from_slice(model.c.mat_vec(m).as_slice());
        }
        JointGaussian { u, v, n, mean, cov }
    }

    fn state_idx(&self, k: usize) -> Vec<usize> {
        (k * self.u..(k + 1) * self.u).collect()
    }

    fn obs_idx(&self, upto: usize) -> Vec<usize> {
        let base = (self.n + 1) * self.u;
        (base..base + upto * self.v).collect()
    }

    fn condition(&self, target: &[usize], given: &[usize], obs: &[Vector]) -> Result<(Vector, Mat), NumericsError> {
        let mu_t = Vector::from_raw(target.iter().map(|i| self.mean[*i]).collect());
        let s_tt = self.cov.select(target, target);
        if given.is_empty() {
            return Ok((mu_t, s_tt));
        }
        let values: Vec<f64> = obs.iter().flat_map(|y| y.iter().copied()).take(given.len()).collect();
        let resid = Mat::from_raw(given.len(), 1, given.iter().zip(&values).map(|(i, y)| y - self.mean[*i]).collect());
        let s_tg = self.cov.select(target, given);
        let s_gg = self.cov.select(given, given);
        let gain_t = s_gg.solve_spd(&s_tg.transpose())?; // Σ_GG⁻¹ Σ_GT
        let mean = mu_t.add(&Vector::from_raw(gain_t.t_matmul(&resid).into_data()));
        let cov = s_tt.sub(&s_tg.matmul(&gain_t)).symmetrize();
        Ok((mean, cov))
    }

    /// `p(x_k | y_1:k)`.
    pub fn filtered(&self, k: usize, obs: &[Vector]) -> Result<GaussianBelief, NumericsError> {
        let (mean, cov) = self.condition(&self.state_idx(k), &self.obs_idx(k), obs)?;
        Ok(GaussianBelief { mean, cov })
    }

    /// `p(x_k | y_1:N)`.
    pub fn smoothed(&self, k: usize, obs: &[Vector]) -> Result<GaussianBelief, NumericsError> {
        let (mean, cov) = self.condition(&self.state_idx(k), &self.obs_idx(self.n), obs)?;
        Ok(GaussianBelief { mean, cov })
    }

    /// `Cov(x_i, x_j | y_1:N)`.
    pub fn smoothed_cross_cov(&self, i: usize, j: usize, obs: &[Vector]) -> Result<Mat, NumericsError> {
        let mut target = self.state_idx(i);
        target.extend(self.state_idx(j));
        let (_, cov) = self.condition(&target, &self.obs_idx(self.n), obs)?;
        let first: Vec<usize> = (0..self.u).collect();
        let second: Vec<usize> = (self.u..2 * self.u).collect();
        Ok(cov.select(&first, &second))
    }

    /// `log p(y_1:N)` under the joint marginal.
    pub fn log_marginal(&self, obs: &[Vector]) -> Result<f64, NumericsError> {
        let idx = self.obs_idx(self.n);
        let y = Vector::from_raw(obs.iter().flat_map(|y| y.iter().copied()).collect());
        let mu = Vector::from_raw(idx.iter().map(|i| self.mean[*i]).collect());
        gaussian_log_density(&y, &mu, &self.cov.select(&idx, &idx))
    }
}

fn random_spd(n: usize, rng: &mut SimRng, floor: f64) -> Mat {
    let b = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    b.matmul_t(&b).scale(0.5).add(&Mat::scaled_identity(n, floor)).symmetrize()
}

/// A random well-conditioned model of the given size plus one simulated
/// observation sequence of length `n`.
pub fn random_small_model(rng: &mut SimRng, u: usize, v: usize, n: usize) -> (LinearGaussianModel, Vec<Vector>) {
    let model = LinearGaussianModel::new(
        Mat::from_fn(u, u, |i, j| if i == j { rng.random_range(0.5..1.1) } else { rng.random_range(-0.4..0.4) }),
        Mat::from_fn(v, u, |_, _| rng.random_range(-1.0..1.0)),
        random_spd(u, rng, 0.1),
        random_spd(v, rng, 0.2),
        Vector::new((0..u).map(|_| rng.random_range(-1.0..1.0)).collect()),
        random_spd(u, rng, 0.2),
    )
    .expect("random model is well formed");
    let traj = model.simulate(n, rng.random()).expect("random covariances are SPD");
    (model, traj.observations)
}

/// Largest absolute deviations between the recursions and the joint oracle.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct OracleDeviation {
    pub cases: usize,
    pub filter_mean: f64,
    pub filter_cov: f64,
    pub smoother_mean: f64,
    pub smoother_cov: f64,
    pub lag_one_cov: f64,
    pub log_likelihood: f64,
}

impl OracleDeviation {
    pub fn worst_moment(&self) -> f64 {
        [self.filter_mean, self.filter_cov, self.smoother_mean, self.smoother_cov, self.lag_one_cov]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error("oracle conditioning failed: {0}")]
    Conditioning(#[from] NumericsError),
}

/// Compares filter, smoother, lag-one covariances and log-likelihood with
/// the joint oracle on `cases` random models (`u ≤ 3`, `v ≤ 2`, `N ≤ 6`).
pub fn run_oracle_suite(cases: usize, rng: &mut SimRng) -> Result<OracleDeviation, OracleError> {
    let mut dev = OracleDeviation { cases, ..Default::default() };
    for _ in 0..cases {
        let u = rng.random_range(1..=3);
        let v = rng.random_range(1..=2);
        let n = rng.random_range(1..=6);
        let (model, obs) = random_small_model(rng, u, v, n);
        let joint = JointGaussian::new(&model, n);
        let (f, s) = filter_and_smooth(&model, &obs)?;
        for k in 0..=n {
            let jf = joint.filtered(k, &obs)?;
            dev.filter_mean = dev.filter_mean.max(f.filtered[k].mean.max_abs_diff(&jf.mean));
            dev.filter_cov = dev.filter_cov.max(f.filtered[k].cov.max_abs_diff(&jf.cov));
            let js = joint.smoothed(k, &obs)?;
            dev.smoother_mean = dev.smoother_mean.max(s.smoothed[k].mean.max_abs_diff(&js.mean));
            dev.smoother_cov = dev.smoother_cov.max(s.smoothed[k].cov.max_abs_diff(&js.cov));
        }
        for k in 0..n {
            let c = joint.smoothed_cross_cov(k + 1, k, &obs)?;
            dev.lag_one_cov = dev.lag_one_cov.max(s.lag_one_cov[k].max_abs_diff(&c));
        }
        dev.log_likelihood = dev.log_likelihood.max((f.log_likelihood - joint.log_marginal(&obs)?).abs());
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;

    #[test]
    fn prior_marginals_follow_the_state_recursion() {
        let mut rng = rng_from_seed(8);
        let (model, obs) = random_small_model(&mut rng, 2, 1, 3);
        let joint = JointGaussian::new(&model, 3);
        // filtered(0) conditions on nothing: the prior itself.
        let b = joint.filtered(0, &obs).unwrap();
        assert!(b.mean.max_abs_diff(&model.m0) < 1e-15);
        assert!(b.cov.max_abs_diff(&model.p0) < 1e-15);
    }

    #[test]
    fn suite_reports_tiny_deviations() {
        let mut rng = rng_from_seed(1);
        let dev = run_oracle_suite(20, &mut rng).unwrap();
        assert!(dev.worst_moment() < 1e-8, "{dev:?}");
        assert!(dev.log_likelihood < 1e-6, "{dev:?}");
    }
}
