//! Linear-Gaussian state-space models and trajectory simulation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{rng_from_seed, sample_gaussian_with_factor, Mat, NumericsError, Vector};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("covariance {name} cannot be factored: {source}")]
    Factorization {
        name: &'static str,
        #[source]
        source: NumericsError,
    },
    #[error("trajectory length must be at least 1")]
    EmptyTrajectory,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Parameters `(A, C, Q, R, m0, P0)` of
/// `x_k = A x_{k-1} + w_k`, `y_k = C x_k + v_k`, `w ~ N(0,Q)`, `v ~ N(0,R)`,
/// `x_0 ~ N(m0, P0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub a: Mat,
    pub c: Mat,
    pub q: Mat,
    pub r: Mat,
    pub m0: Vector,
    pub p0: Mat,
}

impl LinearGaussianModel {
    /// Checks shapes and symmetry of the covariances.
    ///
    /// Positive definiteness is not enforced here: noise-free models
    /// (`Q = 0`, `R = 0`) are legal for simulation, and the filter reports a
    /// degenerate innovation covariance when it meets one.
    pub fn new(a: Mat, c: Mat, q: Mat, r: Mat, m0: Vector, p0: Mat) -> Result<Self, ModelError> {
        let model = LinearGaussianModel { a, c, q, r, m0, p0 };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let u = self.a.rows();
        let bad = |name, reason: String| Err(ModelError::InvalidParameter { name, reason });
        if u == 0 || !self.a.is_square() {
            return bad("A", format!("must be square and nonempty, got {:?}", self.a.shape()));
        }
        let v = self.c.rows();
        if v == 0 || self.c.cols() != u {
            return bad("C", format!("must be v x {u}, got {:?}", self.c.shape()));
        }
        for (name, m, n) in [("Q", &self.q, u), ("R", &self.r, v), ("P0", &self.p0, u)] {
            if m.shape() != (n, n) {
                return bad(name, format!("must be {n}x{n}, got {:?}", m.shape()));
            }
            if m.asymmetry() > 1e-9 * m.max_abs().max(1.0) {
                return bad(name, "must be symmetric".into());
            }
            if (0..n).any(|i| m[(i, i)] < 0.0) {
                return bad(name, "diagonal must be nonnegative".into());
            }
        }
        if self.m0.len() != u {
            return bad("m0", format!("must have length {u}, got {}", self.m0.len()));
        }
        let finite = [&self.a, &self.c, &self.q, &self.r, &self.p0].iter().all(|m| m.is_finite());
        if !finite || !self.m0.is_finite() {
            return bad("theta", "entries must be finite".into());
        }
        Ok(())
    }

    /// State dimension `u`.
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    /// Observation dimension `v`.
    pub fn obs_dim(&self) -> usize {
        self.c.rows()
    }

    /// Draws a trajectory of `n` steps. Deterministic in `(self, n, seed)`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Trajectory, ModelError> {
        simulate(self, n, seed)
    }
}

/// Scalar settings of the one-degree-of-freedom robot model: every covariance
/// is `σ² I` and the initial mean is `(0, 0, m_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub q_var: f64,
    pub r_var: f64,
    pub m_a: f64,
    pub p_var: f64,
}

impl RobotParams {
    /// Values used to generate data in the robot experiment.
    pub const TRUE: RobotParams = RobotParams { q_var: 1e-2, r_var: 5e-3, m_a: 0.1, p_var: 0.1 };
    /// Deliberately wrong starting guess for parameter estimation.
    pub const INITIAL_GUESS: RobotParams = RobotParams { q_var: 2e-2, r_var: 1.0, m_a: 1.0, p_var: 5.0 };
}

/// Constant-acceleration robot with displacement-only observations:
/// `A = [[1, T, T²/2], [0, 1, T], [0, 0, 1]]`, `C = [1, 0, 0]`.
pub fn robot_model(sample_period: f64, q_var: f64, r_var: f64, m_a: f64, p_var: f64) -> Result<LinearGaussianModel, ModelError> {
    let positive = |name: &'static str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter { name, reason: format!("must be positive, got {v}") })
        }
    };
    positive("T", sample_period)?;
    positive("q_var", q_var)?;
    positive("r_var", r_var)?;
    positive("p_var", p_var)?;
    if !m_a.is_finite() {
        return Err(ModelError::InvalidParameter { name: "m_a", reason: "must be finite".into() });
    }
    let t = sample_period;
    LinearGaussianModel::new(
        Mat::from_rows(&[[1.0, t, 0.5 * t * t], [0.0, 1.0, t], [0.0, 0.0, 1.0]]),
        Mat::from_rows(&[[1.0, 0.0, 0.0]]),
        Mat::scaled_identity(3, q_var),
        Mat::scaled_identity(1, r_var),
        Vector::new(vec![0.0, 0.0, m_a]),
        Mat::scaled_identity(3, p_var),
    )
}

pub fn robot_model_from(sample_period: f64, p: RobotParams) -> Result<LinearGaussianModel, ModelError> {
    robot_model(sample_period, p.q_var, p.r_var, p.m_a, p.p_var)
}

/// Simulated states `x_0..x_N` and observations `y_1..y_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    /// `observations[k - 1]` holds `y_k`.
    pub observations: Vec<Vector>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of observed steps `N`.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Writes `k, x_displacement, x_velocity, x_acceleration, y`; row `k = 0`
    /// has an empty `y`. Intended for three-dimensional states with scalar
    /// observations; other shapes write generic `x<i>` / `y<j>` columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let u = self.states.first().map_or(0, |s| s.len());
        let v = self.observations.first().map_or(0, |o| o.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        if u == 3 {
            header.extend(["x_displacement", "x_velocity", "x_acceleration"].map(String::from));
        } else {
            header.extend((0..u).map(|i| format!("x{i}")));
        }
        if v == 1 {
            header.push("y".into());
        } else {
            header.extend((0..v).map(|j| format!("y{j}")));
        }
        w.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match k.checked_sub(1).and_then(|i| self.observations.get(i)) {
                Some(y) => row.extend(y.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), v)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `x_0 ~ N(m0, P0)`, then `x_k = A x_{k-1} + w_k` and `y_k = C x_k + v_k`.
///
/// Draw order per step is `w_k` then `v_k`, all from one ChaCha8 stream
/// seeded with `seed`.
pub fn simulate(model: &LinearGaussianModel, n: usize, seed: u64) -> Result<Trajectory, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptyTrajectory);
    }
    let factor = |name: &'static str, m: &Mat| m.cholesky_psd().map_err(|source| ModelError::Factorization { name, source });
    let lq = factor("Q", &model.q)?;
    let lr = factor("R", &model.r)?;
    let lp = factor("P0", &model.p0)?;
    let zero_u = Vector::zeros(model.state_dim());
    let zero_v = Vector::zeros(model.obs_dim());

    let mut rng = rng_from_seed(seed);
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n);
    states.push(sample_gaussian_with_factor(&model.m0, &lp, &mut rng));
    for _ in 0..n {
        let prev = states.last().expect("nonempty");
        let x = model.a.mat_vec(prev).add(&sample_gaussian_with_factor(&zero_u, &lq, &mut rng));
        let y = model.c.mat_vec(&x).add(&sample_gaussian_with_factor(&zero_v, &lr, &mut rng));
        states.push(x);
        observations.push(y);
    }
    Ok(Trajectory { states, observations, seed })
}
