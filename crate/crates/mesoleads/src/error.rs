//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("lead must have at least one mode")]
    EmptyLead,

    #[error("flat spectral density needs Gamma >= 0 and omega_max > 0 (got Gamma={gamma}, omega_max={omega_max})")]
    BadSpectralDensity { gamma: f64, omega_max: f64 },

    #[error("coupling site {site} out of range for {n_sys} system sites")]
    CouplingSiteOutOfRange { site: usize, n_sys: usize },

    #[error("unknown lead index {0}")]
    UnknownLead(usize),

    #[error("matrix is not Hermitian: max |C - C^dag| = {drift:.3e} exceeds {tol:.1e}")]
    HermiticityDrift { drift: f64, tol: f64 },

    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),

    #[error("steady-state solve failed: damping matrix W is singular or unstable")]
    SingularDynamics,

    #[error("ODE step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("ODE step budget of {max_steps} exhausted at t = {t:.6e}")]
    StepBudgetExhausted { t: f64, max_steps: usize },

    #[error("jump into numerically blocked channel (mode {mode}, direction {sigma:+}): occupation weight {weight:.3e}")]
    BlockedChannel { mode: usize, sigma: i8, weight: f64 },

    #[error("all jump-channel weights vanish at t = {t:.6e}; decay-rate bookkeeping is inconsistent")]
    ZeroChannelWeights { t: f64 },

    #[error("jump channel on mode {0} has no reservoir mapping")]
    NoReservoirForMode(usize),

    #[error("determinant has significant imaginary residue: |Im|/|Re| = {0:.3e}")]
    ImaginaryResidue(f64),

    #[error("dense oracle supports at most {max} modes, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("trajectory failed (seed {seed}, t = {t:.6e}): {source}")]
    Trajectory {
        seed: u64,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol time {t:.6e} outside [0, {t_end:.6e}]")]
    TimeOutOfRange { t: f64, t_end: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
