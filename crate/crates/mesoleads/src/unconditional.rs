//! Ensemble-average (unconditional) dynamics of the extended system.
//!
//! The covariance matrix obeys the Lyapunov equation
//!
//! ```text
//! dC/dt = -(W C + C W^dag) + F,     W = iH(t) + Gamma/2,
//! ```
//!
//! with diagonal damping `Gamma` and injection `F = Gamma f`. At fixed `t`
//! the steady state solves `W C + C W^dag = F`.
//!
//! # Average currents
//!
//! External currents flow between lead modes and their residual reservoirs
//! (positive into the extended system):
//!
//! ```text
//! I_N_alpha = tr[F_alpha - Gamma_alpha C]
//! I_E_alpha = tr[F_alpha H - (Gamma_alpha/2)(C H + H C)]
//! E[I_EM]   = -(1/2) tr[Gamma (H_int C + C H_int)]
//! ```
//!
//! Internal currents flow between the central system and the lead modes.
//! Their operator definitions,
//!
//! ```text
//! J_N_alpha = i <[N_L_alpha, H_int_alpha]>
//! J_E_alpha = i <[H_L_alpha, H_int_alpha]> + tr[H_int_alpha L_alpha(rho)]
//! ```
//!
//! reduce to covariance traces because both commutators are again quadratic
//! forms. With `<c^dag A c> = tr[A C]` and `[c^dag A c, c^dag B c] =
//! c^dag [A, B] c`, taking `A` the lead-alpha projector (or the lead energy
//! diagonal `D_L`) and `B = H_int` gives, per lead-alpha mode `k`:
//!
//! ```text
//! J_N_alpha = -2 sum_k Im[(H_int C)_kk]
//! J_E_alpha = sum_k ( -2 eps_k Im[(H_int C)_kk] - gamma_k Re[(H_int C)_kk] )
//! ```
//!
//! where the second term of `J_E` is the dissipative piece
//! `tr[H_int (dC/dt)|_diss,alpha] = -(1/2) tr[H_int (Gamma_alpha C + C
//! Gamma_alpha)]` (`tr[H_int F_alpha] = 0` since the coupling has no
//! diagonal). Both expressions are linear in `C`; they are unit-tested
//! against the dense Fock-space engine.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lead_model::ExtendedSystem;
use crate::linalg::{self, pack_cmatrix, packed_len, unpack_cmatrix};
use crate::ode::{self, Tolerances};
use crate::{C64, CMatrix};

/// Right-hand side of the Lyapunov equation at time `t`.
pub fn lyapunov_rhs(c: &CMatrix, t: f64, sys: &ExtendedSystem) -> CMatrix {
    let n = sys.n();
    let mut h = CMatrix::zeros(n, n);
    sys.hamiltonian_into(t, &mut h);
    let mut rhs = CMatrix::zeros(n, n);
    lyapunov_rhs_into(c, &h, sys, &mut rhs, &mut CMatrix::zeros(n, n));
    rhs
}

/// As [`lyapunov_rhs`] but with preallocated output and scratch.
fn lyapunov_rhs_into(
    c: &CMatrix,
    h: &CMatrix,
    sys: &ExtendedSystem,
    rhs: &mut CMatrix,
    scratch: &mut CMatrix,
) {
    let n = sys.n();
    let gamma = sys.gamma();
    let f = sys.f_occ();
    // scratch = W C with W = iH + Gamma/2
    scratch.copy_from(h);
    *scratch *= C64::new(0.0, 1.0);
    for k in 0..n {
        scratch[(k, k)] += C64::new(0.5 * gamma[k], 0.0);
    }
    rhs.gemm(C64::new(-1.0, 0.0), scratch, c, C64::new(0.0, 0.0));
    // rhs = -(WC) - (WC)^dag + F ; C Hermitian makes (WC)^dag = C W^dag
    for i in 0..n {
        for j in 0..=i {
            let sym = rhs[(i, j)] + rhs[(j, i)].conj();
            rhs[(i, j)] = sym;
            rhs[(j, i)] = sym.conj();
        }
        rhs[(i, i)] += C64::new(gamma[i] * f[i], 0.0);
    }
}

/// Evolve the covariance from `t0` to `t1`, sampling `n_samples + 1`
/// uniformly spaced points (including both endpoints).
pub fn evolve(
    c0: &CMatrix,
    t0: f64,
    t1: f64,
    sys: &ExtendedSystem,
    tol: Tolerances,
    n_samples: usize,
) -> Result<Vec<(f64, CMatrix)>> {
    let n = sys.n();
    let mut h = CMatrix::zeros(n, n);
    let mut c = CMatrix::zeros(n, n);
    let mut rhs = CMatrix::zeros(n, n);
    let mut scratch = CMatrix::zeros(n, n);
    let mut f = |t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        unpack_cmatrix(y.as_slice(), &mut c);
        sys.hamiltonian_into(t, &mut h);
        lyapunov_rhs_into(&c, &h, sys, &mut rhs, &mut scratch);
        pack_cmatrix(&rhs, dy.as_mut_slice());
    };
    let mut y = DVector::zeros(packed_len(n));
    pack_cmatrix(c0, y.as_mut_slice());
    let mut out = Vec::with_capacity(n_samples + 1);
    out.push((t0, c0.clone()));
    let mut stepper = ode::AdaptiveStepper::new(t0, y, tol);
    for s in 1..=n_samples {
        let t_target = t0 + (t1 - t0) * s as f64 / n_samples as f64;
        while stepper.t < t_target {
            stepper.step(&mut f, t_target)?;
        }
        let mut c_s = CMatrix::zeros(n, n);
        unpack_cmatrix(stepper.y.as_slice(), &mut c_s);
        linalg::hermitize(&mut c_s);
        out.push((t_target, c_s));
    }
    Ok(out)
}

/// Evolve and return only the final covariance.
pub fn evolve_final(
    c0: &CMatrix,
    t0: f64,
    t1: f64,
    sys: &ExtendedSystem,
    tol: Tolerances,
) -> Result<CMatrix> {
    Ok(evolve(c0, t0, t1, sys, tol, 1)?.pop().expect("nonempty").1)
}

/// Steady-state covariance at fixed `t`: solves `W C + C W^dag = F` as a
/// linear system in the vectorized covariance (`(I (x) W + conj(W) (x) I)
/// vec C = vec F`). `N^2 x N^2` is affordable for the ~dozens of modes this
/// crate targets.
pub fn steady_state(sys: &ExtendedSystem, t: f64) -> Result<CMatrix> {
    let n = sys.n();
    let h = sys.hamiltonian(t);
    let gamma = sys.gamma();
    let mut w = h.clone() * C64::new(0.0, 1.0);
    for k in 0..n {
        w[(k, k)] += C64::new(0.5 * gamma[k], 0.0);
    }
    let id = CMatrix::identity(n, n);
    let a = id.kronecker(&w) + w.conjugate().kronecker(&id);
    let mut b = DVector::zeros(n * n);
    for k in 0..n {
        b[k * n + k] = C64::new(gamma[k] * sys.f_occ()[k], 0.0);
    }
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(Error::SingularDynamics)?;
    let mut c_ss = CMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            c_ss[(i, j)] = x[j * n + i];
        }
    }
    linalg::hermitize(&mut c_ss);
    // reject spurious solutions from a near-singular W
    let residual = {
        let lhs = &w * &c_ss + &c_ss * w.adjoint();
        let mut fmat = CMatrix::zeros(n, n);
        for k in 0..n {
            fmat[(k, k)] = C64::new(gamma[k] * sys.f_occ()[k], 0.0);
        }
        linalg::max_abs(&(lhs - fmat))
    };
    let scale = linalg::max_abs(&c_ss).max(1.0);
    if !residual.is_finite() || residual > 1e-9 * scale {
        return Err(Error::SingularDynamics);
    }
    let (lo, hi) = crate::gaussian::spectrum_bounds(&c_ss);
    if lo < -1e-8 || hi > 1.0 + 1e-8 {
        return Err(Error::SingularDynamics);
    }
    Ok(c_ss)
}

/// Average particle current from the residual reservoirs of lead `alpha`
/// into the extended system: `tr[F_alpha - Gamma_alpha C]`.
pub fn avg_particle_current(c: &CMatrix, sys: &ExtendedSystem, alpha: usize) -> Result<f64> {
    if alpha >= sys.n_leads() {
        return Err(Error::UnknownLead(alpha));
    }
    let mut acc = 0.0;
    for k in sys.lead_modes(alpha) {
        acc += sys.gamma()[k] * (sys.f_occ()[k] - c[(k, k)].re);
    }
    Ok(acc)
}

/// Average energy current into the extended system via lead `alpha`:
/// `tr[F_alpha H - (Gamma_alpha/2)(C H + H C)]`.
pub fn avg_energy_current(c: &CMatrix, sys: &ExtendedSystem, alpha: usize, t: f64) -> Result<f64> {
    if alpha >= sys.n_leads() {
        return Err(Error::UnknownLead(alpha));
    }
    let h = sys.hamiltonian(t);
    let hc = &h * c;
    let mut acc = 0.0;
    for k in sys.lead_modes(alpha) {
        acc += sys.gamma()[k] * (sys.f_occ()[k] * h[(k, k)].re - hc[(k, k)].re);
    }
    Ok(acc)
}

/// Ensemble-average measurement-energy current,
/// `-(1/2) tr[Gamma (H_int C + C H_int)]`.
pub fn avg_measurement_energy(c: &CMatrix, sys: &ExtendedSystem, t: f64) -> f64 {
    let n = sys.n();
    let h = sys.hamiltonian(t);
    let mut hint = CMatrix::zeros(n, n);
    sys.interaction_part_into(&h, &mut hint);
    let hint_c = &hint * c;
    let mut acc = 0.0;
    for k in 0..n {
        acc -= sys.gamma()[k] * hint_c[(k, k)].re;
    }
    acc
}

/// Internal (system <-> lead) particle and energy currents for lead
/// `alpha`, positive into the central system. See the module docs for the
/// trace reduction.
pub fn internal_currents(
    c: &CMatrix,
    sys: &ExtendedSystem,
    alpha: usize,
    t: f64,
) -> Result<(f64, f64)> {
    if alpha >= sys.n_leads() {
        return Err(Error::UnknownLead(alpha));
    }
    let n = sys.n();
    let h = sys.hamiltonian(t);
    let mut hint = CMatrix::zeros(n, n);
    sys.interaction_part_into(&h, &mut hint);
    let hint_c = &hint * c;
    let mut jn = 0.0;
    let mut je = 0.0;
    for k in sys.lead_modes(alpha) {
        let z = hint_c[(k, k)];
        let eps_k = h[(k, k)].re;
        jn -= 2.0 * z.im;
        je += -2.0 * eps_k * z.im - sys.gamma()[k] * z.re;
    }
    Ok((jn, je))
}

/// Time-integrated average currents along an unconditional evolution.
#[derive(Debug, Clone)]
pub struct IntegratedCurrents {
    pub c_final: CMatrix,
    /// Per-lead integrated external particle current.
    pub dn: Vec<f64>,
    /// Per-lead integrated external energy current.
    pub de: Vec<f64>,
    /// Per-lead integrated measurement-energy current.
    pub de_m: Vec<f64>,
    /// Per-lead integrated internal particle current.
    pub jn: Vec<f64>,
    /// Per-lead integrated internal energy current.
    pub je: Vec<f64>,
}

impl IntegratedCurrents {
    /// External heat absorbed from reservoir `alpha`:
    /// `dQ = dE - mu dN`.
    pub fn heat(&self, sys: &ExtendedSystem, alpha: usize) -> f64 {
        self.de[alpha] - sys.reservoir(alpha).chemical_potential * self.dn[alpha]
    }

    /// Internal heat absorbed by the system from lead `alpha`.
    pub fn heat_internal(&self, sys: &ExtendedSystem, alpha: usize) -> f64 {
        self.je[alpha] - sys.reservoir(alpha).chemical_potential * self.jn[alpha]
    }
}

/// Evolve the covariance while integrating all average currents (the
/// current integrals ride along in the ODE state, so they share the
/// integrator's error control).
pub fn evolve_with_currents(
    c0: &CMatrix,
    t0: f64,
    t1: f64,
    sys: &ExtendedSystem,
    tol: Tolerances,
) -> Result<IntegratedCurrents> {
    let n = sys.n();
    let n_leads = sys.n_leads();
    let dim = packed_len(n) + 5 * n_leads;
    let mut h = CMatrix::zeros(n, n);
    let mut hint = CMatrix::zeros(n, n);
    let mut c = CMatrix::zeros(n, n);
    let mut rhs = CMatrix::zeros(n, n);
    let mut scratch = CMatrix::zeros(n, n);

    let mut f = |t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        let base = packed_len(n);
        unpack_cmatrix(&y.as_slice()[..base], &mut c);
        sys.hamiltonian_into(t, &mut h);
        lyapunov_rhs_into(&c, &h, sys, &mut rhs, &mut scratch);
        pack_cmatrix(&rhs, &mut dy.as_mut_slice()[..base]);
        sys.interaction_part_into(&h, &mut hint);
        // scratch = H C (for the energy current), rhs = H_int C
        scratch.gemm(C64::new(1.0, 0.0), &h, &c, C64::new(0.0, 0.0));
        rhs.gemm(C64::new(1.0, 0.0), &hint, &c, C64::new(0.0, 0.0));
        for alpha in 0..n_leads {
            let mut i_n = 0.0;
            let mut i_e = 0.0;
            let mut i_em = 0.0;
            let mut j_n = 0.0;
            let mut j_e = 0.0;
            for k in sys.lead_modes(alpha) {
                let gamma_k = sys.gamma()[k];
                let f_k = sys.f_occ()[k];
                let eps_k = h[(k, k)].re;
                i_n += gamma_k * (f_k - c[(k, k)].re);
                i_e += gamma_k * (f_k * eps_k - scratch[(k, k)].re);
                let z = rhs[(k, k)];
                i_em -= gamma_k * z.re;
                j_n -= 2.0 * z.im;
                j_e += -2.0 * eps_k * z.im - gamma_k * z.re;
            }
            dy[base + 5 * alpha] = i_n;
            dy[base + 5 * alpha + 1] = i_e;
            dy[base + 5 * alpha + 2] = i_em;
            dy[base + 5 * alpha + 3] = j_n;
            dy[base + 5 * alpha + 4] = j_e;
        }
    };

    let mut y0 = DVector::zeros(dim);
    pack_cmatrix(c0, &mut y0.as_mut_slice()[..packed_len(n)]);
    let y = ode::integrate(&mut f, t0, t1, y0, tol)?;
    let mut c_final = CMatrix::zeros(n, n);
    unpack_cmatrix(&y.as_slice()[..packed_len(n)], &mut c_final);
    linalg::hermitize(&mut c_final);
    let base = packed_len(n);
    let pull = |slot: usize| -> Vec<f64> {
        (0..n_leads).map(|a| y[base + 5 * a + slot]).collect()
    };
    Ok(IntegratedCurrents {
        c_final,
        dn: pull(0),
        de: pull(1),
        de_m: pull(2),
        jn: pull(3),
        je: pull(4),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lead_model::{
        assemble, single_dot_flat_lead, ReservoirSpec, SpectralDensity,
    };

    fn tol() -> Tolerances {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-13,
        }
    }

    #[test]
    fn decoupled_mode_relaxes_at_gamma() {
        // kappa = 0: every diagonal obeys dC_kk/dt = gamma (f - C_kk)
        let sys = single_dot_flat_lead(0.4, 0.0, 1.0, 3, 1.0, 0.1).unwrap();
        let c = crate::gaussian::Covariance::from_occupations(&[0.3, 0.9, 0.25, 0.5]);
        let rhs = lyapunov_rhs(c.matrix(), 0.0, &sys);
        for k in 1..4 {
            let expected = sys.gamma()[k] * (sys.f_occ()[k] - c.matrix()[(k, k)].re);
            assert!((rhs[(k, k)].re - expected).abs() < 1e-14);
        }
        // undamped dot only moves through coupling, which is zero here
        assert!(rhs[(0, 0)].norm() < 1e-14);
    }

    #[test]
    fn closed_system_preserves_trace() {
        // no reservoirs at all: pure Hamiltonian flow
        let h = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.5, 0.0),
                C64::new(0.2, 0.1),
                C64::new(0.2, -0.1),
                C64::new(-0.3, 0.0),
            ],
        );
        let sys = assemble(h, &[]).unwrap();
        let c0 = crate::gaussian::Covariance::from_occupations(&[0.8, 0.1]);
        let path = evolve(c0.matrix(), 0.0, 5.0, &sys, tol(), 10).unwrap();
        for (_, c) in &path {
            let trace: f64 = (0..2).map(|i| c[(i, i)].re).sum();
            assert!((trace - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn decoupled_mode_matches_closed_form() {
        let sys = single_dot_flat_lead(0.0, 0.0, 1.0, 2, 0.5, -0.2).unwrap();
        let c0 = crate::gaussian::Covariance::from_occupations(&[0.0, 0.9, 0.2]);
        let t1 = 3.0;
        let c1 = evolve_final(c0.matrix(), 0.0, t1, &sys, tol()).unwrap();
        for k in 1..3 {
            let gamma = sys.gamma()[k];
            let f = sys.f_occ()[k];
            let expected = f + (c0.matrix()[(k, k)].re - f) * (-gamma * t1).exp();
            assert!((c1[(k, k)].re - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn steady_state_of_pure_lead_is_thermal() {
        // bath-only extended system: every mode damped, no coupling
        let sys = assemble(
            CMatrix::zeros(0, 0),
            &[ReservoirSpec {
                temperature: 0.7,
                chemical_potential: 0.1,
                spectral_density: SpectralDensity::Flat {
                    strength: 1.0,
                    cutoff: 1.0,
                },
                modes: 4,
                coupling_site: 0,
            }],
        )
        .unwrap();
        let c_ss = steady_state(&sys, 0.0).unwrap();
        for k in 0..4 {
            assert!((c_ss[(k, k)].re - sys.f_occ()[k]).abs() < 1e-12);
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(c_ss[(i, j)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn steady_state_annuls_rhs_and_matches_long_time_evolution() {
        let sys = single_dot_flat_lead(0.3, 0.5, 1.0, 2, 1.0, 0.0).unwrap();
        let c_ss = steady_state(&sys, 0.0).unwrap();
        let rhs = lyapunov_rhs(&c_ss, 0.0, &sys);
        assert!(linalg::max_abs(&rhs) < 1e-10);
        let c0 = crate::gaussian::Covariance::from_occupations(&[1.0, 0.0, 1.0]);
        let c_long = evolve_final(c0.matrix(), 0.0, 80.0, &sys, tol()).unwrap();
        assert!(linalg::max_abs(&(&c_long - &c_ss)) < 1e-8);
    }

    #[test]
    fn fig4_reaches_steady_state_from_anywhere() {
        let sys = single_dot_flat_lead(0.25, 0.125, 1.0, 10, 1.0, 0.0625).unwrap();
        let c_ss = steady_state(&sys, 0.0).unwrap();
        let occs: Vec<f64> = (0..11).map(|k| if k % 2 == 0 { 0.9 } else { 0.05 }).collect();
        let c0 = crate::gaussian::Covariance::from_occupations(&occs);
        // Gamma t = 50 with Gamma = 0.125
        let c_long = evolve_final(c0.matrix(), 0.0, 400.0, &sys, tol()).unwrap();
        assert!(linalg::max_abs(&(&c_long - &c_ss)) < 1e-6);
    }

    #[test]
    fn singular_dynamics_is_reported() {
        // a coupled but undamped system site makes W only marginally stable
        // when the coupling vanishes
        let sys = single_dot_flat_lead(0.4, 0.0, 1.0, 2, 1.0, 0.0).unwrap();
        assert!(matches!(
            steady_state(&sys, 0.0),
            Err(Error::SingularDynamics)
        ));
    }

    #[test]
    fn spectrum_stays_physical_along_evolution() {
        let sys = single_dot_flat_lead(0.25, 0.5, 1.0, 4, 1.0, 0.0).unwrap();
        let c0 = crate::gaussian::Covariance::from_occupations(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        for (_, c) in evolve(c0.matrix(), 0.0, 30.0, &sys, tol(), 30).unwrap() {
            let (lo, hi) = crate::gaussian::spectrum_bounds(&c);
            assert!(lo > -1e-8 && hi < 1.0 + 1e-8);
            assert!(linalg::hermiticity_drift(&c) < 1e-8);
        }
    }

    #[test]
    fn equilibrium_currents_vanish() {
        let sys = single_dot_flat_lead(0.25, 0.125, 1.0, 6, 1.0, 0.0625).unwrap();
        let c_ss = steady_state(&sys, 0.0).unwrap();
        assert!(avg_particle_current(&c_ss, &sys, 0).unwrap().abs() < 1e-10);
        assert!(avg_energy_current(&c_ss, &sys, 0, 0.0).unwrap().abs() < 1e-10);
        let (jn, _) = internal_currents(&c_ss, &sys, 0, 0.0).unwrap();
        assert!(jn.abs() < 1e-10);
    }

    #[test]
    fn thermal_decoupled_state_carries_no_current() {
        let sys = single_dot_flat_lead(0.0, 0.0, 1.0, 3, 1.0, 0.2).unwrap();
        let mut occs = vec![0.5];
        occs.extend((1..4).map(|k| sys.f_occ()[k]));
        let c = crate::gaussian::Covariance::from_occupations(&occs);
        assert!(avg_particle_current(c.matrix(), &sys, 0).unwrap().abs() < 1e-14);
        let (jn, je) = internal_currents(c.matrix(), &sys, 0, 0.0).unwrap();
        assert!(jn.abs() < 1e-14 && je.abs() < 1e-14);
        assert!(avg_measurement_energy(c.matrix(), &sys, 0.0).abs() < 1e-14);
    }

    fn two_lead_dot() -> ExtendedSystem {
        let h_sys = CMatrix::from_element(1, 1, C64::new(0.1, 0.0));
        assemble(
            h_sys,
            &[
                ReservoirSpec {
                    temperature: 1.0,
                    chemical_potential: 0.5,
                    spectral_density: SpectralDensity::Flat {
                        strength: 0.4,
                        cutoff: 1.0,
                    },
                    modes: 4,
                    coupling_site: 0,
                },
                ReservoirSpec {
                    temperature: 0.5,
                    chemical_potential: -0.5,
                    spectral_density: SpectralDensity::Flat {
                        strength: 0.4,
                        cutoff: 1.0,
                    },
                    modes: 4,
                    coupling_site: 0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn biased_dot_conserves_particle_current() {
        let sys = two_lead_dot();
        let c_ss = steady_state(&sys, 0.0).unwrap();
        let left = avg_particle_current(&c_ss, &sys, 0).unwrap();
        let right = avg_particle_current(&c_ss, &sys, 1).unwrap();
        assert!(left.abs() > 1e-3, "expected a finite bias current");
        assert!((left + right).abs() < 1e-10);
        assert!(avg_particle_current(&c_ss, &sys, 2).is_err());
    }

    #[test]
    fn continuity_of_total_particle_number() {
        let sys = two_lead_dot();
        let occs: Vec<f64> = (0..9).map(|k| 0.1 + 0.08 * k as f64).collect();
        let c = crate::gaussian::Covariance::from_occupations(&occs);
        let rhs = lyapunov_rhs(c.matrix(), 0.0, &sys);
        let dn_dt: f64 = (0..9).map(|i| rhs[(i, i)].re).sum();
        let sum_currents = avg_particle_current(c.matrix(), &sys, 0).unwrap()
            + avg_particle_current(c.matrix(), &sys, 1).unwrap();
        assert!((dn_dt - sum_currents).abs() < 1e-10);
    }

    #[test]
    fn dot_occupation_converges_to_wide_band_quadrature() {
        // steady dot occupation against int dw (Gamma/2pi) f(w) /
        // ((w-eps)^2 + Gamma^2/4) as the lead resolution doubles. The
        // integration range extends far beyond the band cutoff: the damped
        // lead modes have Lorentzian tails outside the band, so the L -> inf
        // limit matches the full wide-band integral, not its truncation.
        let (eps, gamma, t_res, mu, w_max) = (0.25, 0.125, 1.0, 0.0625, 1.0);
        let quad = {
            let range = 50.0;
            let n = 200_000;
            let h = 2.0 * range / n as f64;
            let integrand = |w: f64| {
                let f = crate::lead_model::fermi_dirac(w, t_res, mu).unwrap();
                (gamma / (2.0 * std::f64::consts::PI)) * f
                    / ((w - eps).powi(2) + gamma * gamma / 4.0)
            };
            // Simpson rule
            let mut acc = integrand(-range) + integrand(range);
            for i in 1..n {
                let w = -range + i as f64 * h;
                acc += integrand(w) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let occupation = |l: usize| {
            let sys = single_dot_flat_lead(eps, gamma, w_max, l, t_res, mu).unwrap();
            steady_state(&sys, 0.0).unwrap()[(0, 0)].re
        };
        let errs: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&l| (occupation(l) - quad).abs())
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors {errs:?}");
        assert!(errs[2] < 1e-3, "errors {errs:?}");
    }

    #[test]
    fn measurement_energy_shrinks_with_lead_size() {
        let magnitude = |l: usize| {
            let sys = single_dot_flat_lead(0.25, 0.125, 1.0, l, 1.0, 0.0625).unwrap();
            let c_ss = steady_state(&sys, 0.0).unwrap();
            avg_measurement_energy(&c_ss, &sys, 0.0).abs()
        };
        let m10 = magnitude(10);
        let m20 = magnitude(20);
        assert!(m10 > 0.0);
        assert!(m20 < m10, "|E[I_EM]|: L=10 {m10:.3e}, L=20 {m20:.3e}");
    }

    #[test]
    fn integrated_currents_match_pointwise_quadrature() {
        let sys = single_dot_flat_lead(0.3, 0.4, 1.0, 3, 1.0, 0.0).unwrap();
        let c0 = crate::gaussian::Covariance::from_occupations(&[1.0, 0.1, 0.2, 0.3]);
        let integrated = evolve_with_currents(c0.matrix(), 0.0, 4.0, &sys, tol()).unwrap();
        // crude trapezoid over a fine sampled path as the cross-check
        let path = evolve(c0.matrix(), 0.0, 4.0, &sys, tol(), 400).unwrap();
        let mut dn = 0.0;
        for pair in path.windows(2) {
            let (t0, c0) = (&pair[0].0, &pair[0].1);
            let (t1, c1) = (&pair[1].0, &pair[1].1);
            let i0 = avg_particle_current(c0, &sys, 0).unwrap();
            let i1 = avg_particle_current(c1, &sys, 0).unwrap();
            dn += 0.5 * (i0 + i1) * (t1 - t0);
        }
        // trapezoid on 400 points carries O(h^2) ~ 1e-5 error of its own
        assert!((integrated.dn[0] - dn).abs() < 1e-5);
        // total particle balance: integrated current equals occupation change
        let n0: f64 = (0..4).map(|i| c0.matrix()[(i, i)].re).sum();
        let n1: f64 = (0..4).map(|i| integrated.c_final[(i, i)].re).sum();
        assert!((integrated.dn[0] - (n1 - n0)).abs() < 1e-9);
    }
}
