//! Stochastic quantum-jump trajectories of non-interacting fermionic open
//! systems in the mesoscopic-leads description.
//!
//! A macroscopic reservoir is replaced by a finite set of lead modes, each
//! damped toward local thermal equilibrium by a residual reservoir. The
//! extended system (central system + lead modes) evolves under a quadratic
//! GKSL master equation, so every state along a quantum-jump trajectory is a
//! fermionic Gaussian state and is fully described by its covariance matrix
//! `C_ij = <c_j^dag c_i>`.
//!
//! The crate provides:
//!
//! - [`lead_model`]: discretization of reservoir spectral densities into lead
//!   modes and assembly of the extended single-particle model.
//! - [`gaussian`]: covariance-matrix algebra (parametrization, overlaps,
//!   fidelity, eigenstructure).
//! - [`unconditional`]: ensemble-average dynamics (Lyapunov equation, steady
//!   states, average currents).
//! - [`trajectory`]: conditional quantum-jump dynamics with imperfect
//!   detection, waiting-time sampling, and stochastic current accumulation.
//! - [`tpm`]: two-point measurement sampling and stochastic entropy
//!   production with integral-fluctuation-theorem estimators.
//! - [`oracle`]: a dense Fock-space reference engine (dimension `2^N`) used
//!   as ground truth in the test suites.
//!
//! Supporting numerics live in [`linalg`] (Hermitian eigen/determinant
//! helpers) and [`ode`] (embedded Runge-Kutta integrator).

pub mod error;
pub mod gaussian;
pub mod lead_model;
pub mod linalg;
pub mod ode;
pub mod oracle;
pub mod rng;
pub mod tpm;
pub mod trajectory;
pub mod unconditional;

pub use error::Error;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix (column-major).
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dense real vector.
pub type RVector = nalgebra::DVector<f64>;
