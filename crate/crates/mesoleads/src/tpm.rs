//! Two-point-measurement (TPM) scheme and stochastic entropy production.
//!
//! A trajectory is bracketed by two projective measurements: at `t = 0` in
//! the eigenbasis of the unconditional initial state, at `t = tau` in the
//! eigenbasis of the unconditionally evolved state. For Gaussian states the
//! eigenstates are Fock states of the single-particle eigenmodes, so
//!
//! - the first measurement samples a bitstring `s` with independent
//!   Bernoulli bits (probabilities = eigenvalues of `C(0)`), leaving the
//!   trajectory in `C^r(0) = U_0 n_s U_0^dag`;
//! - outcome probabilities at `tau` are functional determinants,
//!   `p_m = det[(1-n_m)(1-C') + n_m C']` with `C' = U^dag C^r(tau) U`;
//! - the final outcome is sampled bit by bit through chain-rule marginals,
//!   each a determinant of a principal submatrix, avoiding the `2^N`
//!   enumeration.
//!
//! The three stochastic entropy productions and their integral fluctuation
//! theorems (`<e^{-S}> = 1`):
//!
//! ```text
//! S_tot  = log p_n^0 - log p_m^tau + Sigma
//! S_unc  = -log p_m^tau + log Tr[rho_r(tau) rho(tau)]
//! S_mart = log p_n^0 - log Tr[rho_r(tau) rho(tau)] + Sigma
//! ```
//!
//! with `S_unc + S_mart = S_tot` by construction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{self, floored_log_det_prob, EIG_CLAMP};
use crate::linalg;
use crate::{C64, CMatrix, RVector};

/// Probability floor in log space; ratios below this are flagged rather
/// than silently distorting the estimators (`exp(LOG_FLOOR) ~ 1e-300`).
pub use crate::gaussian::LOG_PROB_FLOOR as LOG_FLOOR;

/// Eigenbasis of an unconditional covariance matrix, used as a projective
/// measurement basis.
#[derive(Debug, Clone)]
pub struct MeasurementBasis {
    pub u: CMatrix,
    pub lambda: RVector,
    clamp: f64,
}

impl MeasurementBasis {
    pub fn of(c: &CMatrix) -> Self {
        Self::with_clamp(c, EIG_CLAMP)
    }

    /// Same with an explicit eigenvalue clamp (stability diagnostics).
    pub fn with_clamp(c: &CMatrix, clamp: f64) -> Self {
        let (u, lambda) = gaussian::eigenbasis(c);
        Self { u, lambda, clamp }
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    fn occupation(&self, i: usize) -> f64 {
        self.lambda[i].clamp(self.clamp, 1.0 - self.clamp)
    }

    /// Rotate a trajectory covariance into this eigenbasis:
    /// `C' = U^dag C U`.
    pub fn rotate(&self, c: &CMatrix) -> CMatrix {
        let mut rotated = self.u.adjoint() * c * &self.u;
        linalg::hermitize(&mut rotated);
        rotated
    }
}

/// First projective measurement: sample an eigenstate of the initial
/// state. Returns the occupation bits, `log p_n^0` and the post-measurement
/// covariance `C^r(0) = U n_s U^dag`.
pub fn sample_initial<R: Rng>(
    basis: &MeasurementBasis,
    rng: &mut R,
) -> (Vec<u8>, f64, CMatrix) {
    let n = basis.n();
    let mut bits = Vec::with_capacity(n);
    let mut log_p = 0.0;
    for i in 0..n {
        let p1 = basis.occupation(i);
        let u: f64 = rng.gen();
        let bit = u < basis.lambda[i];
        bits.push(bit as u8);
        log_p += if bit { p1.ln() } else { (1.0 - p1).ln() };
    }
    let c_r = projected_covariance(basis, &bits);
    (bits, log_p, c_r)
}

/// Covariance of the eigenstate with the given occupation bits.
pub fn projected_covariance(basis: &MeasurementBasis, bits: &[u8]) -> CMatrix {
    let n = basis.n();
    let mut scaled = basis.u.clone();
    for (j, &bit) in bits.iter().enumerate() {
        if bit == 0 {
            for i in 0..n {
                scaled[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    let mut c = &scaled * basis.u.adjoint();
    linalg::hermitize(&mut c);
    c
}

/// `log p_m` of the eigenstate `bits` in the spectral decomposition of the
/// unconditional state: `sum_i s_i log lambda_i + (1-s_i) log(1-lambda_i)`.
pub fn eigen_log_probability(basis: &MeasurementBasis, bits: &[u8]) -> f64 {
    bits.iter()
        .enumerate()
        .map(|(i, &bit)| {
            let p1 = basis.occupation(i);
            if bit == 1 {
                p1.ln()
            } else {
                (1.0 - p1).ln()
            }
        })
        .sum()
}

/// Determinant of the outcome matrix restricted to the first `len` modes:
/// row `a` is `C'_ab` if `s_a = 1` and `delta_ab - C'_ab` otherwise.
fn prefix_log_probability(c_rot: &CMatrix, bits: &[u8], len: usize) -> Result<f64> {
    if len == 0 {
        return Ok(0.0);
    }
    let m = CMatrix::from_fn(len, len, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        if bits[a] == 1 {
            c_rot[(a, b)]
        } else {
            C64::new(delta, 0.0) - c_rot[(a, b)]
        }
    });
    floored_log_det_prob(&m)
}

/// `log p_m^{r tau}`: probability that the trajectory state `c_r` is
/// projected onto the eigenstate `bits` of the basis.
pub fn projection_log_probability(
    basis: &MeasurementBasis,
    c_r: &CMatrix,
    bits: &[u8],
) -> Result<f64> {
    let rotated = basis.rotate(c_r);
    prefix_log_probability(&rotated, bits, bits.len())
}

/// Second projective measurement: sample the outcome bit by bit via chain-
/// rule marginals (each marginal is a ratio of principal-minor
/// determinants). Returns the bits and `log p_m^{r tau}` of the sampled
/// outcome.
pub fn sample_final<R: Rng>(
    basis: &MeasurementBasis,
    c_r: &CMatrix,
    rng: &mut R,
) -> Result<(Vec<u8>, f64)> {
    let n = basis.n();
    let rotated = basis.rotate(c_r);
    let mut bits = vec![0u8; n];
    let mut log_prefix = 0.0;
    for i in 0..n {
        bits[i] = 1;
        let log_with_one = prefix_log_probability(&rotated, &bits, i + 1)?;
        let q1 = (log_with_one - log_prefix).exp().clamp(0.0, 1.0);
        let u: f64 = rng.gen();
        if u < q1 {
            log_prefix = log_with_one;
        } else {
            bits[i] = 0;
            log_prefix = prefix_log_probability(&rotated, &bits, i + 1)?;
        }
    }
    Ok((bits, log_prefix))
}

/// The quantities attached to one TPM-sampled trajectory.
#[derive(Debug, Clone)]
pub struct TpmSample {
    pub bits_initial: Vec<u8>,
    pub bits_final: Vec<u8>,
    /// `log p_n^0` of the first measurement outcome.
    pub log_p_initial: f64,
    /// `log p_m^tau`: weight of the final outcome in the unconditional
    /// state (the backward trajectory's starting probability).
    pub log_p_final_unconditional: f64,
    /// `log p_m^{r tau}`: weight of the final outcome in the conditional
    /// state.
    pub log_p_final_conditional: f64,
    /// `log Tr[rho_r(tau) rho(tau)]`.
    pub log_overlap: f64,
    /// Entropy flux `Sigma` accumulated by the trajectory's jumps.
    pub entropy_flux: f64,
    pub s_tot: f64,
    pub s_unc: f64,
    pub s_mart: f64,
    /// True if any log-probability hit [`LOG_FLOOR`]; floored samples are
    /// counted by callers instead of entering estimator means silently.
    pub floored: bool,
}

/// Assemble the entropy productions from the measured pieces.
pub fn entropy_productions(
    bits_initial: Vec<u8>,
    bits_final: Vec<u8>,
    log_p_initial: f64,
    log_p_final_unconditional: f64,
    log_p_final_conditional: f64,
    log_overlap: f64,
    entropy_flux: f64,
) -> TpmSample {
    let mut floored = false;
    let mut floor = |x: f64| -> f64 {
        if x < LOG_FLOOR {
            floored = true;
            LOG_FLOOR
        } else {
            x
        }
    };
    let lp0 = floor(log_p_initial);
    let lpt = floor(log_p_final_unconditional);
    let lo = floor(log_overlap);
    let s_tot = lp0 - lpt + entropy_flux;
    let s_unc = -lpt + lo;
    let s_mart = lp0 - lo + entropy_flux;
    TpmSample {
        bits_initial,
        bits_final,
        log_p_initial: lp0,
        log_p_final_unconditional: lpt,
        log_p_final_conditional: floor(log_p_final_conditional),
        log_overlap: lo,
        entropy_flux,
        s_tot,
        s_unc,
        s_mart,
        floored,
    }
}

impl TpmSample {
    /// Modified total entropy production including the measurement-energy
    /// contribution `-sum_alpha dE_M_alpha / T_alpha` in the flux.
    pub fn modified_total(&self, de_m_over_t: f64) -> f64 {
        self.s_tot - de_m_over_t
    }
}

/// Streaming estimator for an integral fluctuation theorem: tracks the
/// sample mean and standard error of `e^{-S}` (per-sample jackknife of a
/// plain mean reduces to the usual `sd/sqrt(n)`), plus `<S>` for the
/// second-law check.
#[derive(Debug, Clone, Default)]
pub struct IftEstimator {
    n: u64,
    mean_exp: f64,
    m2_exp: f64,
    mean_s: f64,
    m2_s: f64,
}

impl IftEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: f64) {
        let x = (-s).exp();
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_exp;
        self.mean_exp += dx / n;
        self.m2_exp += dx * (x - self.mean_exp);
        let ds = s - self.mean_s;
        self.mean_s += ds / n;
        self.m2_s += ds * (s - self.mean_s);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// `<e^{-S}>`.
    pub fn mean(&self) -> f64 {
        self.mean_exp
    }

    /// Standard error of `<e^{-S}>`.
    pub fn standard_error(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2_exp / ((self.n - 1) as f64 * self.n as f64)).sqrt()
    }

    /// `<S>`.
    pub fn s_mean(&self) -> f64 {
        self.mean_s
    }

    /// Standard error of `<S>`.
    pub fn s_standard_error(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2_s / ((self.n - 1) as f64 * self.n as f64)).sqrt()
    }
}

/// Convenience: run the estimator over a slice.
pub fn ift_estimate(values: &[f64]) -> Result<IftEstimator> {
    if values.len() < 2 {
        return Err(Error::DimensionMismatch(values.len(), 2));
    }
    let mut est = IftEstimator::new();
    for &s in values {
        est.push(s);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Covariance;
    use crate::rng::trajectory_rng;

    fn all_bitstrings(n: usize) -> Vec<Vec<u8>> {
        (0..1usize << n)
            .map(|b| (0..n).map(|k| ((b >> k) & 1) as u8).collect())
            .collect()
    }

    #[test]
    fn pure_initial_state_is_deterministic() {
        let c = Covariance::from_occupations(&[1.0, 0.0]).into_matrix();
        let basis = MeasurementBasis::of(&c);
        let mut rng = trajectory_rng(1, 1);
        for _ in 0..20 {
            let (bits, log_p, c_r) = sample_initial(&basis, &mut rng);
            // eigenvalues sorted ascending: mode order in the basis can
            // permute, so compare the reconstructed covariance instead
            assert_eq!(bits.iter().sum::<u8>(), 1);
            assert!(log_p.abs() < 1e-9);
            assert!(linalg::max_abs(&(&c_r - &c)) < 1e-9);
        }
    }

    #[test]
    fn maximally_mixed_initial_sampling_is_uniform() {
        let c = Covariance::from_occupations(&[0.5, 0.5]).into_matrix();
        let basis = MeasurementBasis::of(&c);
        let mut rng = trajectory_rng(2, 0);
        let n_draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n_draws {
            let (bits, log_p, _) = sample_initial(&basis, &mut rng);
            assert!((log_p - 0.25_f64.ln()).abs() < 1e-9);
            counts[(bits[0] + 2 * bits[1]) as usize] += 1;
        }
        let mean = n_draws as f64 / 4.0;
        let sd = (n_draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn initial_probabilities_are_normalized_and_consistent() {
        let c = crate::gaussian::random_covariance(3, 5);
        let basis = MeasurementBasis::of(&c);
        let mut total = 0.0;
        for bits in all_bitstrings(3) {
            total += eigen_log_probability(&basis, &bits).exp();
        }
        assert!((total - 1.0).abs() < 1e-10);
        // projected covariances average back to the unconditional state
        let mut avg = CMatrix::zeros(3, 3);
        for bits in all_bitstrings(3) {
            let p = eigen_log_probability(&basis, &bits).exp();
            avg += projected_covariance(&basis, &bits) * C64::new(p, 0.0);
        }
        assert!(linalg::max_abs(&(&avg - &c)) < 1e-9);
    }

    #[test]
    fn unconditional_probability_of_empty_string() {
        let f = [0.2, 0.6, 0.35];
        let c = Covariance::from_occupations(&f).into_matrix();
        let basis = MeasurementBasis::of(&c);
        let p = eigen_log_probability(&basis, &[0, 0, 0]).exp();
        let expected: f64 = f.iter().map(|x| 1.0 - x).product();
        assert!((p - expected).abs() < 1e-12);
    }

    #[test]
    fn projection_reduces_to_product_form_for_diagonal_states() {
        // C^r equal to the measured state: determinant formula collapses to
        // the eigenvalue product
        let c = crate::gaussian::random_covariance(3, 8);
        let basis = MeasurementBasis::of(&c);
        for bits in all_bitstrings(3) {
            let det_form = projection_log_probability(&basis, &c, &bits).unwrap();
            let product_form = eigen_log_probability(&basis, &bits);
            assert!((det_form - product_form).abs() < 1e-9);
        }
        // explicitly diagonal rotated state: p = c_1 prod_{i>1} (1 - c_i)
        let diag = Covariance::from_occupations(&[0.3, 0.7, 0.2]).into_matrix();
        let identity_basis = MeasurementBasis::of(&CMatrix::identity(3, 3).map(|z| z * 0.5));
        let p = projection_log_probability(&identity_basis, &diag, &[1, 0, 0])
            .unwrap()
            .exp();
        assert!((p - 0.3 * 0.3 * 0.8).abs() < 1e-10);
    }

    #[test]
    fn projection_probabilities_sum_to_one() {
        for seed in 0..5 {
            let c_unc = crate::gaussian::random_covariance(4, 40 + seed);
            let c_r = crate::gaussian::random_covariance(4, 80 + seed);
            let basis = MeasurementBasis::of(&c_unc);
            let total: f64 = all_bitstrings(4)
                .iter()
                .map(|bits| {
                    projection_log_probability(&basis, &c_r, bits)
                        .unwrap()
                        .exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "seed {seed}: {total}");
        }
    }

    #[test]
    fn final_sampling_recovers_pure_outcome() {
        let c = Covariance::from_occupations(&[0.0, 1.0, 0.0]).into_matrix();
        let basis = MeasurementBasis::of(&c);
        let mut rng = trajectory_rng(3, 0);
        let (bits, log_p) = sample_final(&basis, &c, &mut rng).unwrap();
        assert!(log_p.abs() < 1e-9);
        let expected = projection_log_probability(&basis, &c, &bits).unwrap();
        assert!((log_p - expected).abs() < 1e-9);
        assert_eq!(bits.iter().sum::<u8>(), 1);
    }

    #[test]
    fn final_sampling_matches_exhaustive_distribution() {
        // total-variation distance between the chain-rule sampler and the
        // exhaustive determinant distribution
        let c_unc = crate::gaussian::random_covariance(4, 13);
        let c_r = crate::gaussian::random_covariance(4, 14);
        let basis = MeasurementBasis::of(&c_unc);
        let strings = all_bitstrings(4);
        let exact: Vec<f64> = strings
            .iter()
            .map(|bits| {
                projection_log_probability(&basis, &c_r, bits)
                    .unwrap()
                    .exp()
            })
            .collect();
        let n_draws = 10_000;
        let mut counts = vec![0usize; 16];
        let mut rng = trajectory_rng(4, 0);
        for _ in 0..n_draws {
            let (bits, log_p) = sample_final(&basis, &c_r, &mut rng).unwrap();
            let idx = bits
                .iter()
                .enumerate()
                .map(|(k, &b)| (b as usize) << k)
                .sum::<usize>();
            counts[idx] += 1;
            // sampled log-probability agrees with the direct determinant
            let direct = projection_log_probability(&basis, &c_r, &bits).unwrap();
            assert!((log_p - direct).abs() < 1e-8);
        }
        let tv: f64 = exact
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (p - c as f64 / n_draws as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn entropy_identities() {
        // p_n^0 = p_m^tau and no flux: S_tot = 0
        let s = entropy_productions(vec![0], vec![0], -0.7, -0.7, -0.2, -0.4, 0.0);
        assert!(s.s_tot.abs() < 1e-15);
        // overlap equal to p_m^tau: S_unc = 0
        let s = entropy_productions(vec![0], vec![0], -0.3, -0.9, -0.5, -0.9, 0.4);
        assert!(s.s_unc.abs() < 1e-15);
        // decomposition holds for arbitrary inputs
        let s = entropy_productions(vec![1], vec![0], -1.3, -0.8, -0.6, -2.1, 0.7);
        assert!((s.s_unc + s.s_mart - s.s_tot).abs() < 1e-12);
        assert!(!s.floored);
        let s = entropy_productions(vec![1], vec![0], -1e9, -0.8, -0.6, -2.1, 0.7);
        assert!(s.floored);
    }

    #[test]
    fn ift_estimator_reference_values() {
        let est = ift_estimate(&[0.0, 0.0, 0.0]).unwrap();
        assert!((est.mean() - 1.0).abs() < 1e-15);
        assert!(est.standard_error() < 1e-15);
        let est = ift_estimate(&[2.0_f64.ln(), -(2.0_f64.ln())]).unwrap();
        assert!((est.mean() - 1.25).abs() < 1e-12);
        assert!(ift_estimate(&[1.0]).is_err());
    }

    #[test]
    fn clamp_halving_barely_moves_probabilities() {
        // stability of the FT pipeline inputs under halving the eigenvalue
        // clamp, on a state with genuinely extremal eigenvalues
        let c = Covariance::from_occupations(&[1.0, 0.0, 0.37]).into_matrix();
        let a = MeasurementBasis::with_clamp(&c, 1e-12);
        let b = MeasurementBasis::with_clamp(&c, 5e-13);
        for bits in all_bitstrings(3) {
            let pa = eigen_log_probability(&a, &bits).exp();
            let pb = eigen_log_probability(&b, &bits).exp();
            assert!((pa - pb).abs() < 1e-5);
        }
    }
}
