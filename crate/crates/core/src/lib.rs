//! State estimation for linear-Gaussian systems with learned observation
//! encoders.
//!
//! The crate is layered bottom-up:
//!
//! * [`numerics`]: dense matrices, Cholesky, Gaussian sampling and densities.
//! * [`statespace`]: models `x_k = A x_{k-1} + w_k`, `y_k = C x_k + v_k`,
//!   the constant-acceleration robot, trajectory simulation.
//! * [`kalman`]: filter, RTS smoother and innovation log-likelihood.
//! * [`oracle`]: joint-Gaussian conditioning used to validate [`kalman`].
//! * [`em`]: EM identification of `(A, C, Q, R, m0, P0)`.
//! * [`neural`]: hand-differentiated layers, attention, Adam.
//! * [`encoders`]: LSTM and Transformer sequence encoders.
//! * [`pipeline`]: the KF / EM-KF / LSTM-KF / Transformer-KF / TL-KF methods.
//! * [`experiment`]: configuration and CSV table generation for the CLI.

pub mod em;
pub mod encoders;
pub mod experiment;
pub mod kalman;
pub mod neural;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod statespace;
