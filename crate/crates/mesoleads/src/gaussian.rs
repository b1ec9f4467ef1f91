//! Fermionic Gaussian state algebra on covariance matrices.
//!
//! A Gaussian state of `N` modes is `rho = exp(-c^dag M c) / Z` and is fully
//! determined by its covariance matrix `C_ij = <c_j^dag c_i>`, a Hermitian
//! matrix with spectrum in `[0, 1]`. `M = log((1-C)/C)` and
//! `Z = 1/det(1-C)`.
//!
//! Overlaps and fidelities of two Gaussian states reduce to determinants in
//! single-particle space:
//!
//! ```text
//! Tr[rho1 rho2]      = det(1 + e^{-M1} e^{-M2}) / (Z1 Z2)
//!                    = det[(1-C1)(1-C2) + C1 C2]
//! Tr[sqrt(rho1 rho2)] = det(1 + e^{-M1/2} e^{-M2/2}) / sqrt(Z1 Z2)
//!                    = det[sqrt(1-C1) sqrt(1-C2) + sqrt(C1) sqrt(C2)]
//! ```
//!
//! The second forms follow from the first by factoring `e^{-M} = C/(1-C)`
//! out of the determinant; they stay finite for pure states (eigenvalues
//! exactly 0 or 1), so no clamping enters these paths. Logarithms of the
//! spectrum (needed for `M` and for eigenstate probabilities) clamp
//! eigenvalues to `[EIG_CLAMP, 1 - EIG_CLAMP]` first.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{self, herm_eigen, hermitize, log_det_real_nonneg};
use crate::{C64, CMatrix, RVector};

/// Spectrum clamp applied before logarithms and inverses.
pub const EIG_CLAMP: f64 = 1e-12;
/// Hermiticity drift beyond this raises a diagnostic at module boundaries.
pub const HERMITICITY_TOL: f64 = 1e-8;
/// Tolerance on imaginary residue of determinants that must be real.
const DET_IMAG_TOL: f64 = 1e-10;
/// Floor for log-probabilities and log-overlaps (`exp` of it ~ 1e-300).
pub const LOG_PROB_FLOOR: f64 = -690.0;

/// Log of a determinant that represents a probability-like quantity in
/// `[0, 1]`: nonnegative up to rounding. Values that are numerically zero
/// (including tiny negative round-off, `|det| < 1e-9`) are floored to
/// [`LOG_PROB_FLOOR`]; a genuinely negative or complex determinant is still
/// an error.
pub fn floored_log_det_prob(m: &CMatrix) -> Result<f64> {
    match log_det_real_nonneg(m, DET_IMAG_TOL) {
        Ok(v) => Ok(v.max(LOG_PROB_FLOOR)),
        Err(e) => {
            let (log_abs, _) = linalg::log_det(m);
            if log_abs < -20.7 {
                Ok(LOG_PROB_FLOOR)
            } else {
                Err(e)
            }
        }
    }
}

/// Validated covariance matrix: Hermitian with spectrum in `[0, 1]` up to a
/// small slack.
#[derive(Debug, Clone)]
pub struct Covariance {
    mat: CMatrix,
}

impl Covariance {
    /// Hermitize and wrap. Drift beyond [`HERMITICITY_TOL`] is an error.
    pub fn new(mut mat: CMatrix) -> Result<Self> {
        let drift = hermitize(&mut mat);
        if drift > HERMITICITY_TOL {
            return Err(Error::HermiticityDrift {
                drift,
                tol: HERMITICITY_TOL,
            });
        }
        Ok(Self { mat })
    }

    /// Diagonal covariance with the given mode occupations.
    pub fn from_occupations(occupations: &[f64]) -> Self {
        let n = occupations.len();
        let mat = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(occupations[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { mat }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    /// Check the spectrum lies in `[-slack, 1 + slack]`.
    pub fn check_spectrum(&self, slack: f64) -> Result<()> {
        let (lo, hi) = spectrum_bounds(&self.mat);
        if lo < -slack || hi > 1.0 + slack {
            return Err(Error::HermiticityDrift {
                drift: (-lo).max(hi - 1.0),
                tol: slack,
            });
        }
        Ok(())
    }
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn spectrum_bounds(c: &CMatrix) -> (f64, f64) {
    let (_, lambda) = herm_eigen(c);
    (lambda[0], lambda[lambda.len() - 1])
}

/// Exponent matrix and log partition function of a Gaussian state.
#[derive(Debug, Clone)]
pub struct GaussianParametrization {
    /// Hermitian exponent `M = log((1-C)/C)` on the clamped spectrum.
    pub m: CMatrix,
    /// `log Z = -log det(1-C)`, accumulated from eigenvalue logs.
    pub log_z: f64,
}

fn clamp_eig(x: f64) -> f64 {
    x.clamp(EIG_CLAMP, 1.0 - EIG_CLAMP)
}

/// `(M, log Z)` of the state with covariance `c`.
pub fn to_parametrization(c: &CMatrix) -> GaussianParametrization {
    let (u, lambda) = herm_eigen(c);
    let n = lambda.len();
    let mut log_z = 0.0;
    let mut scaled = u.clone();
    for j in 0..n {
        let lam = clamp_eig(lambda[j]);
        let mu = ((1.0 - lam) / lam).ln();
        log_z -= (1.0 - lam).ln();
        for i in 0..n {
            scaled[(i, j)] *= Complex::new(mu, 0.0);
        }
    }
    let mut m = &scaled * u.adjoint();
    hermitize(&mut m);
    GaussianParametrization { m, log_z }
}

/// Covariance of the state with exponent matrix `m`: `C = (1 + e^M)^{-1}`.
pub fn from_parametrization(p: &GaussianParametrization) -> CMatrix {
    let (u, mu) = herm_eigen(&p.m);
    let n = mu.len();
    let mut scaled = u.clone();
    for j in 0..n {
        // 1/(1+e^mu) evaluated on the decaying branch
        let x = mu[j];
        let occ = if x >= 0.0 {
            let e = (-x).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + x.exp())
        };
        for i in 0..n {
            scaled[(i, j)] *= Complex::new(occ, 0.0);
        }
    }
    let mut c = &scaled * u.adjoint();
    hermitize(&mut c);
    c
}

/// Eigendecomposition of a covariance matrix, eigenvalues ascending.
pub fn eigenbasis(c: &CMatrix) -> (CMatrix, RVector) {
    herm_eigen(c)
}

/// `log Tr[rho1 rho2]` from the covariance matrices of the two states.
pub fn log_overlap(c1: &CMatrix, c2: &CMatrix) -> Result<f64> {
    let n = c1.nrows();
    if c2.nrows() != n {
        return Err(Error::DimensionMismatch(n, c2.nrows()));
    }
    let id = CMatrix::identity(n, n);
    let c1bar = &id - c1;
    let c2bar = &id - c2;
    let a = &c1bar * &c2bar + c1 * c2;
    floored_log_det_prob(&a)
}

/// `Tr[rho1 rho2]`; symmetric in its arguments and equal to the purity when
/// the states coincide.
pub fn overlap(c1: &CMatrix, c2: &CMatrix) -> Result<f64> {
    Ok(log_overlap(c1, c2)?.exp())
}

/// Purity `Tr[rho^2]`.
pub fn purity(c: &CMatrix) -> Result<f64> {
    overlap(c, c)
}

/// Gaussian-state fidelity `Tr[sqrt(rho1 rho2)]`.
///
/// The BCH composition of the two exponents gives
/// `det(1 + sqrt(e^{-M1} e^{-M2})) / sqrt(Z1 Z2)` with the matrix square
/// root of the *product* (the factored form `e^{-M1/2} e^{-M2/2}` is only
/// equivalent when the states commute). Evaluated through the Hermitian
/// similarity partner `W = T1^{1/2} T2 T1^{1/2}` of `T1 T2`
/// (`T_i = C_i (1-C_i)^{-1}` on the clamped spectrum), in log space:
///
/// ```text
/// log F = sum_i log(1 + sqrt(w_i))
///         + (1/2) [log det(1-C1) + log det(1-C2)]
/// ```
pub fn fidelity(c1: &CMatrix, c2: &CMatrix) -> Result<f64> {
    let n = c1.nrows();
    if c2.nrows() != n {
        return Err(Error::DimensionMismatch(n, c2.nrows()));
    }
    // T^{1/2} and log det(1-C) from the clamped spectrum
    let half_transfer = |c: &CMatrix| -> (CMatrix, f64) {
        let (u, lambda) = herm_eigen(c);
        let mut log_det_bar = 0.0;
        let mut scaled = u.clone();
        for j in 0..n {
            let lam = clamp_eig(lambda[j]);
            log_det_bar += (1.0 - lam).ln();
            let root = (lam / (1.0 - lam)).sqrt();
            for i in 0..n {
                scaled[(i, j)] *= Complex::new(root, 0.0);
            }
        }
        let mut t_half = &scaled * u.adjoint();
        hermitize(&mut t_half);
        (t_half, log_det_bar)
    };
    let (t1_half, log_det_bar1) = half_transfer(c1);
    let (t2_half, log_det_bar2) = half_transfer(c2);
    let t2 = &t2_half * &t2_half;
    let mut w = &t1_half * t2 * &t1_half;
    hermitize(&mut w);
    let (_, omega) = herm_eigen(&w);
    let mut log_f = 0.5 * (log_det_bar1 + log_det_bar2);
    for i in 0..n {
        log_f += (1.0 + omega[i].max(0.0).sqrt()).ln();
    }
    Ok(log_f.exp())
}

/// Deterministic pseudo-random covariance with spectrum well inside (0, 1);
/// shared by unit tests across the crate.
#[cfg(test)]
pub(crate) fn random_covariance(n: usize, seed: u64) -> CMatrix {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw = CMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let mut h = &raw + raw.adjoint();
    hermitize(&mut h);
    let (u, lambda) = herm_eigen(&h);
    let lo = lambda[0];
    let hi = lambda[lambda.len() - 1];
    let mut scaled = u.clone();
    for j in 0..n {
        let x = 0.05 + 0.9 * (lambda[j] - lo) / (hi - lo);
        for i in 0..n {
            scaled[(i, j)] *= C64::new(x, 0.0);
        }
    }
    let mut c = &scaled * u.adjoint();
    hermitize(&mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_temperature_mode() {
        let c = Covariance::from_occupations(&[0.5]);
        let p = to_parametrization(c.matrix());
        assert!(linalg::max_abs(&p.m) < 1e-12);
        assert!((p.log_z - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_parametrization() {
        let f = [0.2, 0.7, 0.51];
        let c = Covariance::from_occupations(&f);
        let p = to_parametrization(c.matrix());
        for (i, fi) in f.iter().enumerate() {
            let expected = ((1.0 - fi) / fi).ln();
            assert!((p.m[(i, i)].re - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn parametrization_round_trips() {
        for seed in 0..20 {
            let c = random_covariance(4, seed);
            let back = from_parametrization(&to_parametrization(&c));
            assert!(linalg::max_abs(&(&back - &c)) < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn overlap_of_pure_state_is_one() {
        let c = Covariance::from_occupations(&[0.0, 1.0]);
        let o = overlap(c.matrix(), c.matrix()).unwrap();
        assert!((o - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_of_maximally_mixed_pair() {
        let c = Covariance::from_occupations(&[0.5, 0.5]);
        let o = overlap(c.matrix(), c.matrix()).unwrap();
        assert!((o - 0.25).abs() < 1e-12);
    }

    #[test]
    fn overlap_is_symmetric() {
        for seed in 0..10 {
            let a = random_covariance(4, 100 + seed);
            let b = random_covariance(4, 200 + seed);
            let oab = overlap(&a, &b).unwrap();
            let oba = overlap(&b, &a).unwrap();
            assert!((oab - oba).abs() < 1e-10);
            assert!(oab > 0.0 && oab <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn overlap_matches_exponent_form() {
        // The clamp-free determinant equals the BCH form
        // det(1 + e^{-M1} e^{-M2})/(Z1 Z2) on well-conditioned states.
        for seed in 0..5 {
            let a = random_covariance(3, 300 + seed);
            let b = random_covariance(3, 400 + seed);
            let pa = to_parametrization(&a);
            let pb = to_parametrization(&b);
            let (ua, la) = herm_eigen(&pa.m);
            let exp_neg = |u: &CMatrix, l: &RVector| {
                let n = l.len();
                let mut s = u.clone();
                for j in 0..n {
                    for i in 0..n {
                        s[(i, j)] *= C64::new((-l[j]).exp(), 0.0);
                    }
                }
                s * u.adjoint()
            };
            let (ub, lb) = herm_eigen(&pb.m);
            let m = CMatrix::identity(3, 3) + exp_neg(&ua, &la) * exp_neg(&ub, &lb);
            let (log_abs, _) = linalg::log_det(&m);
            let bch = (log_abs - pa.log_z - pb.log_z).exp();
            let direct = overlap(&a, &b).unwrap();
            assert!(
                (bch - direct).abs() < 1e-8,
                "seed {seed}: {bch} vs {direct}"
            );
        }
    }

    #[test]
    fn fidelity_identical_states() {
        for seed in 0..5 {
            let c = random_covariance(4, 500 + seed);
            let f = fidelity(&c, &c).unwrap();
            assert!((f - 1.0).abs() < 1e-8);
        }
        // exact for pure states too
        let pure = Covariance::from_occupations(&[1.0, 0.0, 1.0]);
        let f = fidelity(pure.matrix(), pure.matrix()).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_mixed_versus_empty_mode() {
        // single mode, f1 = 1/2 against f2 -> 0: Tr sqrt(rho1 rho2) = sqrt(1/2).
        // The spectrum clamp costs O(sqrt(EIG_CLAMP)) here: fidelity is not
        // Lipschitz at pure states.
        let a = Covariance::from_occupations(&[0.5]);
        let b = Covariance::from_occupations(&[0.0]);
        let f = fidelity(a.matrix(), b.matrix()).unwrap();
        assert!((f - 0.5_f64.sqrt()).abs() < 2e-6);
    }

    #[test]
    fn fidelity_within_bounds() {
        for seed in 0..10 {
            let a = random_covariance(3, 600 + seed);
            let b = random_covariance(3, 700 + seed);
            let f = fidelity(&a, &b).unwrap();
            assert!(f >= 0.0 && f <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn eigenbasis_sorts_and_reconstructs() {
        let c = Covariance::from_occupations(&[0.9, 0.1, 0.4]);
        let (u, lambda) = eigenbasis(c.matrix());
        assert!((lambda[0] - 0.1).abs() < 1e-12);
        assert!((lambda[2] - 0.9).abs() < 1e-12);
        let rebuilt =
            &u * CMatrix::from_diagonal(&lambda.map(|x| C64::new(x, 0.0))) * u.adjoint();
        assert!(linalg::max_abs(&(&rebuilt - c.matrix())) < 1e-12);
    }

    #[test]
    fn rank_one_projector_spectrum() {
        let half = C64::new(0.5, 0.0);
        let c = CMatrix::from_row_slice(2, 2, &[half, half, half, half]);
        let (_, lambda) = eigenbasis(&c);
        assert!(lambda[0].abs() < 1e-12);
        assert!((lambda[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.5, 0.0),
                C64::new(0.3, 0.0),
                C64::new(0.9, 0.0),
                C64::new(0.5, 0.0),
            ],
        );
        assert!(Covariance::new(m).is_err());
    }
}
