//! Dense Fock-space reference engine (dimension `2^N`).
//!
//! Brute-force ground truth for the covariance-matrix machinery: the full
//! many-body density matrix is evolved under the same GKSL generator, the
//! same no-click/jump decomposition, and, crucially, the same waiting-time
//! driver ([`crate::trajectory::run_monitored`]) with the same random-number
//! consumption order. Under a locked seed both engines must therefore emit
//! the identical jump record, event by event.
//!
//! Fermionic operators use the Jordan-Wigner convention matching the mode
//! ordering of [`crate::lead_model`]: basis state `|b>` occupies mode `k`
//! iff bit `k` of `b` is set, and `c_k |b> = (-1)^(sum_{j<k} n_j) |b - 2^k>`.
//!
//! Everything here is test-support machinery; sizes are capped (`N <= 8`
//! for generator applications, `N <= 6` for trajectories) and nothing is
//! tuned for speed beyond what the test suites need.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian;
use crate::lead_model::ExtendedSystem;
use crate::linalg::{self, herm_eigen, hermitize, pack_cmatrix, packed_len, unpack_cmatrix};
use crate::ode::{self, Tolerances};
use crate::trajectory::{
    channel_table, run_monitored, Channel, Direction, JumpEvent, MonitoredEngine,
    TrajectoryOptions,
};
use crate::{C64, CMatrix};

/// Mode cap for generator applications.
pub const MAX_MODES: usize = 8;
/// Mode cap for dense trajectory sampling.
pub const MAX_TRAJECTORY_MODES: usize = 6;

/// Jordan-Wigner ladder operators on the `2^n`-dimensional Fock space.
pub struct FockSpace {
    n: usize,
    dim: usize,
    annihilators: Vec<CMatrix>,
}

impl FockSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n > MAX_MODES {
            return Err(Error::OracleTooLarge { n, max: MAX_MODES });
        }
        let dim = 1usize << n;
        let mut annihilators = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = CMatrix::zeros(dim, dim);
            let low_mask = (1usize << k) - 1;
            for b in 0..dim {
                if b & (1 << k) != 0 {
                    let parity = (b & low_mask).count_ones();
                    let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
                    c[(b & !(1 << k), b)] = C64::new(sign, 0.0);
                }
            }
            annihilators.push(c);
        }
        Ok(Self {
            n,
            dim,
            annihilators,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn annihilator(&self, k: usize) -> &CMatrix {
        &self.annihilators[k]
    }

    /// Occupation of mode `k` in basis state `b`.
    pub fn occupied(b: usize, k: usize) -> bool {
        b & (1 << k) != 0
    }

    /// Many-body operator `sum_ij m_ij c_i^dag c_j` of a single-particle
    /// matrix `m`.
    pub fn quadratic_operator(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.n {
            for j in 0..self.n {
                if m[(i, j)].norm() == 0.0 {
                    continue;
                }
                let prod = self.annihilators[i].adjoint() * &self.annihilators[j];
                out += prod * m[(i, j)];
            }
        }
        out
    }

    /// Product state `prod_k (occ_k n_k + (1-occ_k)(1-n_k))`: diagonal
    /// density matrix with independent mode occupations.
    pub fn product_state(&self, occupations: &[f64]) -> CMatrix {
        assert_eq!(occupations.len(), self.n);
        let mut rho = CMatrix::zeros(self.dim, self.dim);
        for b in 0..self.dim {
            let mut p = 1.0;
            for (k, occ) in occupations.iter().enumerate() {
                p *= if Self::occupied(b, k) { *occ } else { 1.0 - *occ };
            }
            rho[(b, b)] = C64::new(p, 0.0);
        }
        rho
    }

    /// Gaussian state with covariance `c`: `exp(-c^dag M c)/Z` built by
    /// exponentiating the quadratic exponent in the many-body space.
    pub fn gaussian_state(&self, c: &CMatrix) -> CMatrix {
        let p = gaussian::to_parametrization(c);
        let exponent = self.quadratic_operator(&p.m);
        let (u, lambda) = herm_eigen(&exponent);
        let mut scaled = u.clone();
        for j in 0..self.dim {
            let w = (-lambda[j]).exp();
            for i in 0..self.dim {
                scaled[(i, j)] *= C64::new(w, 0.0);
            }
        }
        let mut rho = &scaled * u.adjoint();
        let trace: f64 = (0..self.dim).map(|i| rho[(i, i)].re).sum();
        rho /= C64::new(trace, 0.0);
        hermitize(&mut rho);
        rho
    }

    /// Covariance matrix `C_ij = <c_j^dag c_i>` of a density matrix.
    pub fn covariance(&self, rho: &CMatrix) -> CMatrix {
        let mut c = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let m_i = &self.annihilators[i] * rho;
            for j in 0..self.n {
                // <c_j^dag c_i> = tr[c_i rho c_j^dag]
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..self.dim {
                    for b in 0..self.dim {
                        acc += m_i[(a, b)] * self.annihilators[j][(a, b)].conj();
                    }
                }
                c[(i, j)] = acc;
            }
        }
        hermitize(&mut c);
        c
    }

    /// Number operators of the rotated modes `d = U^dag c` (columns of `U`
    /// are single-particle eigenvectors), as dense many-body matrices.
    pub fn rotated_number_ops(&self, u: &CMatrix) -> Vec<CMatrix> {
        (0..self.n)
            .map(|i| {
                let mut d = CMatrix::zeros(self.dim, self.dim);
                for j in 0..self.n {
                    d += &self.annihilators[j] * u[(j, i)].conj();
                }
                d.adjoint() * d
            })
            .collect()
    }

    /// Projector onto the Fock state of the rotated modes with the given
    /// occupation bits.
    pub fn rotated_fock_projector(&self, u: &CMatrix, bits: &[u8]) -> CMatrix {
        let number_ops = self.rotated_number_ops(u);
        let id = CMatrix::identity(self.dim, self.dim);
        let mut proj = id.clone();
        for (k, &bit) in bits.iter().enumerate() {
            let factor = if bit == 1 {
                number_ops[k].clone()
            } else {
                &id - &number_ops[k]
            };
            proj = proj * factor;
        }
        hermitize(&mut proj);
        proj
    }

    /// Four-point function `<c_i^dag c_j c_k^dag c_l>`.
    pub fn four_point(&self, rho: &CMatrix, i: usize, j: usize, k: usize, l: usize) -> C64 {
        let op = self.annihilators[i].adjoint()
            * &self.annihilators[j]
            * self.annihilators[k].adjoint()
            * &self.annihilators[l];
        linalg::trace_prod(rho, &op)
    }
}

/// Validated dense density matrix.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub rho: CMatrix,
}

impl DenseState {
    pub fn new(mut rho: CMatrix) -> Result<Self> {
        let drift = hermitize(&mut rho);
        if drift > 1e-8 {
            return Err(Error::HermiticityDrift { drift, tol: 1e-8 });
        }
        let trace: f64 = (0..rho.nrows()).map(|i| rho[(i, i)].re).sum();
        if (trace - 1.0).abs() > 1e-10 {
            return Err(Error::HermiticityDrift {
                drift: (trace - 1.0).abs(),
                tol: 1e-10,
            });
        }
        let (lo, _) = gaussian::spectrum_bounds(&rho);
        if lo < -1e-9 {
            return Err(Error::HermiticityDrift {
                drift: -lo,
                tol: 1e-9,
            });
        }
        Ok(Self { rho })
    }
}

/// Many-body GKSL generator of an extended system, with the pieces needed
/// for conditional evolution.
pub struct DenseOracle<'a> {
    sys: &'a ExtendedSystem,
    pub fock: FockSpace,
    h_static: CMatrix,
    drive_patterns: Vec<CMatrix>,
    /// Diagonal of `sum_k,sigma L^dag L` per basis state.
    k_diag: Vec<f64>,
    /// Same, weighted by detection efficiencies.
    k_diag_detected: Vec<f64>,
    channels: Vec<Channel>,
}

impl<'a> DenseOracle<'a> {
    pub fn new(sys: &'a ExtendedSystem) -> Result<Self> {
        let n = sys.n();
        let fock = FockSpace::new(n)?;
        let h_static = fock.quadratic_operator(sys.h_static_part());
        let drive_patterns = sys
            .drive_terms()
            .iter()
            .map(|d| fock.quadratic_operator(&d.pattern))
            .collect();
        let dim = fock.dim();
        let mut k_diag = vec![0.0; dim];
        let mut k_diag_detected = vec![0.0; dim];
        for b in 0..dim {
            for k in 0..n {
                let occ = FockSpace::occupied(b, k) as u8 as f64;
                let in_rate = sys.rate_in(k) * (1.0 - occ);
                let out_rate = sys.rate_out(k) * occ;
                k_diag[b] += in_rate + out_rate;
                k_diag_detected[b] +=
                    sys.lambda_plus()[k] * in_rate + sys.lambda_minus()[k] * out_rate;
            }
        }
        Ok(Self {
            sys,
            fock,
            h_static,
            drive_patterns,
            k_diag,
            k_diag_detected,
            channels: channel_table(sys),
        })
    }

    fn hamiltonian_many(&self, t: f64) -> CMatrix {
        let mut h = self.h_static.clone();
        for (pattern, drive) in self.drive_patterns.iter().zip(self.sys.drive_terms()) {
            let a = (drive.amplitude)(t);
            if a != 0.0 {
                h += pattern * C64::new(a, 0.0);
            }
        }
        h
    }

    /// Apply the full GKSL generator:
    /// `-i[H, rho] + sum_k,sigma (L rho L^dag - (1/2){L^dag L, rho})`.
    pub fn liouvillian(&self, t: f64, rho: &CMatrix) -> CMatrix {
        let h = self.hamiltonian_many(t);
        let mut out = &h * rho - rho * &h;
        out *= C64::new(0.0, -1.0);
        let dim = self.fock.dim();
        for a in 0..dim {
            for b in 0..dim {
                out[(a, b)] -= 0.5 * (self.k_diag[a] + self.k_diag[b]) * rho[(a, b)];
            }
        }
        for ch in &self.channels {
            let c_op = self.fock.annihilator(ch.mode);
            let (rate, jump) = match ch.direction {
                Direction::Plus => (
                    self.sys.rate_in(ch.mode),
                    c_op.adjoint() * rho * c_op,
                ),
                Direction::Minus => (
                    self.sys.rate_out(ch.mode),
                    c_op * rho * c_op.adjoint(),
                ),
            };
            out += jump * C64::new(rate, 0.0);
        }
        out
    }

    /// Unconditional evolution of the dense state.
    pub fn evolve(&self, rho0: &CMatrix, t0: f64, t1: f64, tol: Tolerances) -> Result<CMatrix> {
        let dim = self.fock.dim();
        let mut rho = CMatrix::zeros(dim, dim);
        let mut y0 = DVector::zeros(packed_len(dim));
        pack_cmatrix(rho0, y0.as_mut_slice());
        let y = ode::integrate(
            |t, yv: &DVector<f64>, dyv: &mut DVector<f64>| {
                unpack_cmatrix(yv.as_slice(), &mut rho);
                let drho = self.liouvillian(t, &rho);
                pack_cmatrix(&drho, dyv.as_mut_slice());
            },
            t0,
            t1,
            y0,
            tol,
        )?;
        let mut out = CMatrix::zeros(dim, dim);
        unpack_cmatrix(y.as_slice(), &mut out);
        hermitize(&mut out);
        Ok(out)
    }

    pub fn covariance(&self, rho: &CMatrix) -> CMatrix {
        self.fock.covariance(rho)
    }

    /// Purity `tr[rho^2]`.
    pub fn purity(&self, rho: &CMatrix) -> f64 {
        linalg::trace_prod(rho, rho).re
    }

    /// Largest residual of Wick's theorem,
    /// `<c_i^dag c_j c_k^dag c_l> - (C_ji C_lk + C_li (delta_jk - C_jk))`,
    /// over all index tuples.
    pub fn max_wick_residual(&self, rho: &CMatrix) -> f64 {
        let c = self.covariance(rho);
        let n = self.fock.n();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let dense = self.fock.four_point(rho, i, j, k, l);
                        let delta = if j == k { 1.0 } else { 0.0 };
                        let wick = c[(j, i)] * c[(l, k)]
                            + c[(l, i)] * (C64::new(delta, 0.0) - c[(j, k)]);
                        worst = worst.max((dense - wick).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Conditional dense engine driven by [`run_monitored`].
///
/// State layout: the packed density matrix. The no-click generator is the
/// normalized form
/// `-i[H,rho] - (1/2) sum {L^dag L, rho} + K_detected rho
///  + sum (1-Lambda) L rho L^dag`,
/// whose trace derivative vanishes, paired with `dlog p/dt = -K_detected`.
pub struct DenseEngine<'a> {
    oracle: DenseOracle<'a>,
    initial: DVector<f64>,
    dim: usize,
    rho: CMatrix,
    perfect: bool,
}

impl<'a> DenseEngine<'a> {
    pub fn new(sys: &'a ExtendedSystem, rho0: &CMatrix) -> Result<Self> {
        if sys.n() > MAX_TRAJECTORY_MODES {
            return Err(Error::OracleTooLarge {
                n: sys.n(),
                max: MAX_TRAJECTORY_MODES,
            });
        }
        let oracle = DenseOracle::new(sys)?;
        let dim = oracle.fock.dim();
        let mut initial = DVector::zeros(packed_len(dim));
        pack_cmatrix(rho0, initial.as_mut_slice());
        Ok(Self {
            oracle,
            initial,
            dim,
            rho: CMatrix::zeros(dim, dim),
            perfect: sys.all_efficiencies_perfect(),
        })
    }

    pub fn density_of(&self, y: &[f64]) -> CMatrix {
        let mut rho = CMatrix::zeros(self.dim, self.dim);
        unpack_cmatrix(&y[..packed_len(self.dim)], &mut rho);
        rho
    }

    fn occupation(&self, k: usize) -> f64 {
        (0..self.dim)
            .filter(|&b| FockSpace::occupied(b, k))
            .map(|b| self.rho[(b, b)].re)
            .sum()
    }

    fn detected_rate(&self) -> f64 {
        (0..self.dim)
            .map(|b| self.oracle.k_diag_detected[b] * self.rho[(b, b)].re)
            .sum()
    }
}

impl MonitoredEngine for DenseEngine<'_> {
    fn state_len(&self) -> usize {
        packed_len(self.dim)
    }

    fn initial_state(&self) -> DVector<f64> {
        self.initial.clone()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> f64 {
        unpack_cmatrix(y, &mut self.rho);
        let h = self.oracle.hamiltonian_many(t);
        let mut out = &h * &self.rho - &self.rho * &h;
        out *= C64::new(0.0, -1.0);
        let k_detected = self.detected_rate();
        for a in 0..self.dim {
            for b in 0..self.dim {
                let damp = 0.5 * (self.oracle.k_diag[a] + self.oracle.k_diag[b]);
                out[(a, b)] += (k_detected - damp) * self.rho[(a, b)];
            }
        }
        if !self.perfect {
            let sys = self.oracle.sys;
            for ch in &self.oracle.channels {
                let c_op = self.oracle.fock.annihilator(ch.mode);
                let (miss, jump) = match ch.direction {
                    Direction::Plus => (
                        (1.0 - sys.lambda_plus()[ch.mode]) * sys.rate_in(ch.mode),
                        c_op.adjoint() * &self.rho * c_op,
                    ),
                    Direction::Minus => (
                        (1.0 - sys.lambda_minus()[ch.mode]) * sys.rate_out(ch.mode),
                        c_op * &self.rho * c_op.adjoint(),
                    ),
                };
                // the matching -(1-Lambda)<L^dag L> rho is already part of
                // the K_detected rho term above
                if miss != 0.0 {
                    out += jump * C64::new(miss, 0.0);
                }
            }
        }
        pack_cmatrix(&out, dy);
        k_detected.max(0.0)
    }

    fn channels(&self) -> &[Channel] {
        &self.oracle.channels
    }

    fn channel_weights(&mut self, _t: f64, y: &[f64], out: &mut [f64]) {
        unpack_cmatrix(y, &mut self.rho);
        let sys = self.oracle.sys;
        for (i, ch) in self.oracle.channels.iter().enumerate() {
            let occ = self.occupation(ch.mode);
            out[i] = match ch.direction {
                Direction::Plus => sys.lambda_plus()[ch.mode] * sys.rate_in(ch.mode) * (1.0 - occ),
                Direction::Minus => sys.lambda_minus()[ch.mode] * sys.rate_out(ch.mode) * occ,
            }
            .max(0.0);
        }
    }

    fn apply_jump(&mut self, _t: f64, y: &mut [f64], idx: usize) -> Result<()> {
        unpack_cmatrix(y, &mut self.rho);
        let ch = self.oracle.channels[idx];
        let c_op = self.oracle.fock.annihilator(ch.mode);
        let occ = self.occupation(ch.mode);
        let (weight, mut updated) = match ch.direction {
            Direction::Plus => (1.0 - occ, c_op.adjoint() * &self.rho * c_op),
            Direction::Minus => (occ, c_op * &self.rho * c_op.adjoint()),
        };
        if weight <= gaussian::EIG_CLAMP {
            return Err(Error::BlockedChannel {
                mode: ch.mode,
                sigma: if ch.direction == Direction::Plus { 1 } else { -1 },
                weight,
            });
        }
        let trace: f64 = (0..self.dim).map(|i| updated[(i, i)].re).sum();
        updated /= C64::new(trace, 0.0);
        hermitize(&mut updated);
        pack_cmatrix(&updated, y);
        Ok(())
    }
}

/// Sample one dense quantum-jump trajectory with the shared driver.
pub fn dense_trajectory<R: Rng>(
    sys: &ExtendedSystem,
    rho0: &CMatrix,
    t0: f64,
    t1: f64,
    rng: &mut R,
    opts: &TrajectoryOptions,
) -> Result<(Vec<JumpEvent>, CMatrix)> {
    let mut engine = DenseEngine::new(sys, rho0)?;
    let run = run_monitored(&mut engine, t0, t1, rng, opts)?;
    let mut rho = engine.density_of(run.final_state.as_slice());
    hermitize(&mut rho);
    Ok((run.record, rho))
}
