//! Construction of the extended single-particle model: central system plus
//! damped lead modes representing thermal reservoirs.
//!
//! Each reservoir with spectral density `J(w)` is replaced by `l` lead
//! modes on a linear energy grid. Mode `k` sits at the middle of its energy
//! bin, is damped at rate `gamma_k` equal to the level spacing, couples to
//! its system site with strength `kappa_k = sqrt(J(eps_k) gamma_k / 2 pi)`,
//! and relaxes toward the Fermi-Dirac occupation of the reservoir.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg;
use crate::{C64, CMatrix, RVector};

/// Scalar protocol function of time.
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reservoir spectral density.
#[derive(Debug, Clone)]
pub enum SpectralDensity {
    /// `J(w) = strength` for `|w| <= cutoff`, zero outside.
    Flat { strength: f64, cutoff: f64 },
    /// Piecewise-linear interpolation through `(w, J(w))` points sorted by
    /// `w`; zero outside the tabulated range.
    Tabulated { points: Vec<(f64, f64)> },
}

impl SpectralDensity {
    pub fn value_at(&self, omega: f64) -> f64 {
        match self {
            SpectralDensity::Flat { strength, cutoff } => {
                if omega.abs() <= *cutoff {
                    *strength
                } else {
                    0.0
                }
            }
            SpectralDensity::Tabulated { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                let first = points[0];
                let last = points[points.len() - 1];
                if omega <= first.0 || omega >= last.0 {
                    return 0.0;
                }
                match points.binary_search_by(|(w, _)| w.total_cmp(&omega)) {
                    Ok(i) => points[i].1,
                    Err(i) => {
                        let (w0, j0) = points[i - 1];
                        let (w1, j1) = points[i];
                        j0 + (j1 - j0) * (omega - w0) / (w1 - w0)
                    }
                }
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            SpectralDensity::Flat { cutoff, .. } => (-cutoff, *cutoff),
            SpectralDensity::Tabulated { points } => {
                (points[0].0, points[points.len() - 1].0)
            }
        }
    }
}

/// One thermal reservoir attached to a system site.
#[derive(Clone)]
pub struct ReservoirSpec {
    /// Temperature (energy units, k_B = 1).
    pub temperature: f64,
    /// Chemical potential.
    pub chemical_potential: f64,
    /// Spectral density of the coupling.
    pub spectral_density: SpectralDensity,
    /// Number of lead modes.
    pub modes: usize,
    /// System site the lead couples to.
    pub coupling_site: usize,
}

impl fmt::Debug for ReservoirSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReservoirSpec")
            .field("T", &self.temperature)
            .field("mu", &self.chemical_potential)
            .field("modes", &self.modes)
            .field("site", &self.coupling_site)
            .finish()
    }
}

/// Discretized lead: per-mode energies, dampings, couplings, occupations.
#[derive(Debug, Clone)]
pub struct LeadSpec {
    pub energies: Vec<f64>,
    pub dampings: Vec<f64>,
    pub couplings: Vec<f64>,
    pub occupations: Vec<f64>,
}

/// Fermi-Dirac occupation `1 / (exp((eps - mu)/T) + 1)`.
///
/// Evaluated through the decaying exponential branch so large `|eps - mu|`
/// neither overflows nor loses the tail.
pub fn fermi_dirac(eps: f64, temperature: f64, mu: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let x = (eps - mu) / temperature;
    Ok(if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    })
}

/// Discretize a reservoir into its lead modes on a linear mid-bin grid.
///
/// With `l` modes over support `[w_min, w_max]`: bin width
/// `dw = (w_max - w_min)/l`, mode energies `eps_k = w_min + (k - 1/2) dw`,
/// dampings `gamma_k = dw`, couplings `kappa_k = sqrt(J(eps_k) dw / 2 pi)`.
/// Mid-bin placement keeps `gamma_k` equal to the level spacing without
/// zero-weight edge modes.
pub fn discretize_lead(reservoir: &ReservoirSpec) -> Result<LeadSpec> {
    if reservoir.modes == 0 {
        return Err(Error::EmptyLead);
    }
    if let SpectralDensity::Flat { strength, cutoff } = reservoir.spectral_density {
        if strength < 0.0 || cutoff <= 0.0 {
            return Err(Error::BadSpectralDensity {
                gamma: strength,
                omega_max: cutoff,
            });
        }
    }
    let (w_min, w_max) = reservoir.spectral_density.support();
    let l = reservoir.modes;
    let dw = (w_max - w_min) / l as f64;
    let mut lead = LeadSpec {
        energies: Vec::with_capacity(l),
        dampings: Vec::with_capacity(l),
        couplings: Vec::with_capacity(l),
        occupations: Vec::with_capacity(l),
    };
    for k in 0..l {
        let eps = w_min + (k as f64 + 0.5) * dw;
        let j = reservoir.spectral_density.value_at(eps);
        lead.energies.push(eps);
        lead.dampings.push(dw);
        lead.couplings.push((j * dw / (2.0 * std::f64::consts::PI)).sqrt());
        lead.occupations.push(fermi_dirac(
            eps,
            reservoir.temperature,
            reservoir.chemical_potential,
        )?);
    }
    Ok(lead)
}

/// Thermodynamic parameters of the residual reservoir behind a lead.
#[derive(Debug, Clone, Copy)]
pub struct ReservoirThermo {
    pub temperature: f64,
    pub chemical_potential: f64,
}

/// A time-dependent Hamiltonian term: `amplitude(t) * pattern`.
#[derive(Clone)]
pub struct DriveTerm {
    pub pattern: CMatrix,
    pub amplitude: TimeFn,
}

/// The assembled extended system: Hamiltonian generator, damping and
/// injection diagonals, detection efficiencies, and the lead/reservoir
/// bookkeeping.
///
/// Mode ordering is `(system sites, lead 1 modes, ..., lead N_R modes)`.
/// Immutable after construction; evaluations of `H(t)` are pure in `t`, so
/// the value can be shared read-only across concurrent trajectories.
#[derive(Clone)]
pub struct ExtendedSystem {
    n_sys: usize,
    n: usize,
    h_static: CMatrix,
    drives: Vec<DriveTerm>,
    gamma: RVector,
    f_occ: RVector,
    lambda_plus: RVector,
    lambda_minus: RVector,
    lead_of_mode: Vec<Option<usize>>,
    lead_ranges: Vec<std::ops::Range<usize>>,
    reservoirs: Vec<ReservoirThermo>,
    lead_energies: RVector,
}

impl fmt::Debug for ExtendedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtendedSystem")
            .field("n_sys", &self.n_sys)
            .field("n", &self.n)
            .field("leads", &self.lead_ranges)
            .finish()
    }
}

/// Assemble an extended system from a static central-system Hamiltonian and
/// a list of reservoirs. For time-dependent protocols use
/// [`ExtendedSystem::with_drive`] / [`ExtendedSystem::with_coupling_drive`].
pub fn assemble(h_system: CMatrix, reservoirs: &[ReservoirSpec]) -> Result<ExtendedSystem> {
    let n_sys = h_system.nrows();
    if h_system.ncols() != n_sys {
        return Err(Error::DimensionMismatch(n_sys, h_system.ncols()));
    }
    let total_modes: usize = reservoirs.iter().map(|r| r.modes).sum();
    let n = n_sys + total_modes;

    let mut h = CMatrix::zeros(n, n);
    h.view_mut((0, 0), (n_sys, n_sys)).copy_from(&h_system);
    let mut gamma = RVector::zeros(n);
    let mut f_occ = RVector::zeros(n);
    let mut lead_of_mode = vec![None; n];
    let mut lead_ranges = Vec::with_capacity(reservoirs.len());
    let mut thermo = Vec::with_capacity(reservoirs.len());
    let mut lead_energies = RVector::zeros(n);

    let mut offset = n_sys;
    for (alpha, reservoir) in reservoirs.iter().enumerate() {
        // n_sys = 0 is the degenerate bath-only system: no coupling entries
        // are written, so the site index is irrelevant.
        if n_sys > 0 && reservoir.coupling_site >= n_sys {
            return Err(Error::CouplingSiteOutOfRange {
                site: reservoir.coupling_site,
                n_sys,
            });
        }
        let lead = discretize_lead(reservoir)?;
        let p = reservoir.coupling_site;
        for k in 0..reservoir.modes {
            let m = offset + k;
            h[(m, m)] = Complex::new(lead.energies[k], 0.0);
            if n_sys > 0 {
                h[(p, m)] = Complex::new(lead.couplings[k], 0.0);
                h[(m, p)] = Complex::new(lead.couplings[k], 0.0);
            }
            gamma[m] = lead.dampings[k];
            f_occ[m] = lead.occupations[k];
            lead_of_mode[m] = Some(alpha);
            lead_energies[m] = lead.energies[k];
        }
        lead_ranges.push(offset..offset + reservoir.modes);
        thermo.push(ReservoirThermo {
            temperature: reservoir.temperature,
            chemical_potential: reservoir.chemical_potential,
        });
        offset += reservoir.modes;
    }

    Ok(ExtendedSystem {
        n_sys,
        n,
        h_static: h,
        drives: Vec::new(),
        gamma,
        f_occ,
        lambda_plus: RVector::from_element(n, 1.0),
        lambda_minus: RVector::from_element(n, 1.0),
        lead_of_mode,
        lead_ranges,
        reservoirs: thermo,
        lead_energies,
    })
}

impl ExtendedSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_sys(&self) -> usize {
        self.n_sys
    }

    pub fn n_leads(&self) -> usize {
        self.lead_ranges.len()
    }

    /// Add a drive term `amplitude(t) * pattern` to the Hamiltonian.
    pub fn with_drive(mut self, pattern: CMatrix, amplitude: TimeFn) -> Self {
        assert_eq!(pattern.nrows(), self.n);
        self.drives.push(DriveTerm { pattern, amplitude });
        self
    }

    /// Drive the system-lead coupling of lead `alpha`: the static coupling
    /// entries are moved into a drive pattern scaled by `amplitude(t)`.
    pub fn with_coupling_drive(mut self, alpha: usize, amplitude: TimeFn) -> Result<Self> {
        let range = self
            .lead_ranges
            .get(alpha)
            .cloned()
            .ok_or(Error::UnknownLead(alpha))?;
        let mut pattern = CMatrix::zeros(self.n, self.n);
        for m in range {
            for p in 0..self.n_sys {
                pattern[(p, m)] = self.h_static[(p, m)];
                pattern[(m, p)] = self.h_static[(m, p)];
                self.h_static[(p, m)] = C64::new(0.0, 0.0);
                self.h_static[(m, p)] = C64::new(0.0, 0.0);
            }
        }
        self.drives.push(DriveTerm {
            pattern,
            amplitude,
        });
        Ok(self)
    }

    /// Override detection efficiencies (defaults are 1 everywhere).
    pub fn with_efficiencies(mut self, lambda_plus: RVector, lambda_minus: RVector) -> Self {
        assert_eq!(lambda_plus.len(), self.n);
        assert_eq!(lambda_minus.len(), self.n);
        for k in 0..self.n {
            assert!((0.0..=1.0).contains(&lambda_plus[k]));
            assert!((0.0..=1.0).contains(&lambda_minus[k]));
        }
        self.lambda_plus = lambda_plus;
        self.lambda_minus = lambda_minus;
        self
    }

    /// Uniform detection efficiency on all channels.
    pub fn with_uniform_efficiency(self, lambda_plus: f64, lambda_minus: f64) -> Self {
        let n = self.n;
        self.with_efficiencies(
            RVector::from_element(n, lambda_plus),
            RVector::from_element(n, lambda_minus),
        )
    }

    /// Evaluate `H(t)` into `out`.
    pub fn hamiltonian_into(&self, t: f64, out: &mut CMatrix) {
        out.copy_from(&self.h_static);
        for drive in &self.drives {
            let a = (drive.amplitude)(t);
            if a != 0.0 {
                out.zip_apply(&drive.pattern, |o, p| *o += C64::new(a, 0.0) * p);
            }
        }
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let mut h = CMatrix::zeros(self.n, self.n);
        self.hamiltonian_into(t, &mut h);
        h
    }

    pub fn is_static(&self) -> bool {
        self.drives.is_empty()
    }

    /// Static part of the Hamiltonian (everything outside the drive terms).
    pub fn h_static_part(&self) -> &CMatrix {
        &self.h_static
    }

    /// Drive terms; `H(t)` is the static part plus
    /// `sum_d amplitude_d(t) * pattern_d`.
    pub fn drive_terms(&self) -> &[DriveTerm] {
        &self.drives
    }

    /// Damping-rate diagonal (zero on system sites).
    pub fn gamma(&self) -> &RVector {
        &self.gamma
    }

    /// Target occupations per mode (zero on system sites).
    pub fn f_occ(&self) -> &RVector {
        &self.f_occ
    }

    /// Injection rate `gamma_k f_k` for mode `k`.
    pub fn rate_in(&self, k: usize) -> f64 {
        self.gamma[k] * self.f_occ[k]
    }

    /// Extraction rate `gamma_k (1 - f_k)` for mode `k`.
    pub fn rate_out(&self, k: usize) -> f64 {
        self.gamma[k] * (1.0 - self.f_occ[k])
    }

    pub fn lambda_plus(&self) -> &RVector {
        &self.lambda_plus
    }

    pub fn lambda_minus(&self) -> &RVector {
        &self.lambda_minus
    }

    pub fn all_efficiencies_perfect(&self) -> bool {
        let perfect = |v: &RVector| v.iter().all(|&x| x == 1.0);
        perfect(&self.lambda_plus) && perfect(&self.lambda_minus)
    }

    pub fn lead_of_mode(&self, k: usize) -> Option<usize> {
        self.lead_of_mode[k]
    }

    pub fn lead_modes(&self, alpha: usize) -> std::ops::Range<usize> {
        self.lead_ranges[alpha].clone()
    }

    pub fn reservoir(&self, alpha: usize) -> &ReservoirThermo {
        &self.reservoirs[alpha]
    }

    /// Static on-site energy of lead mode `k`; this is the energy quantum
    /// exchanged with the residual reservoir on a jump in channel `k`.
    pub fn lead_mode_energy(&self, k: usize) -> f64 {
        self.lead_energies[k]
    }

    /// Split a Hamiltonian into bare and interaction parts. The bare part
    /// `H_0` keeps the system-system and lead-lead blocks; the interaction
    /// `H_int` is the system-lead coupling.
    pub fn split_hamiltonian(&self, h: &CMatrix) -> (CMatrix, CMatrix) {
        let mut h0 = h.clone();
        let mut hint = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mixed = (self.lead_of_mode[i].is_none()) != (self.lead_of_mode[j].is_none());
                if mixed {
                    hint[(i, j)] = h[(i, j)];
                    h0[(i, j)] = C64::new(0.0, 0.0);
                }
            }
        }
        (h0, hint)
    }

    /// Copy only the interaction (system-lead) block of `h` into `out`.
    pub fn interaction_part_into(&self, h: &CMatrix, out: &mut CMatrix) {
        out.fill(C64::new(0.0, 0.0));
        for i in 0..self.n {
            for j in 0..self.n {
                let mixed = (self.lead_of_mode[i].is_none()) != (self.lead_of_mode[j].is_none());
                if mixed {
                    out[(i, j)] = h[(i, j)];
                }
            }
        }
    }

    /// Verify Hermiticity of `H(t)` on a grid of sample times.
    pub fn check_hermitian(&self, times: &[f64], tol: f64) -> Result<()> {
        for &t in times {
            let h = self.hamiltonian(t);
            let drift = linalg::hermiticity_drift(&h);
            if drift > tol {
                return Err(Error::HermiticityDrift { drift, tol });
            }
        }
        Ok(())
    }
}

/// Convenience constructor for the recurring benchmark setup: one dot at
/// energy `epsilon` coupled to a single flat-spectral-density reservoir.
pub fn single_dot_flat_lead(
    epsilon: f64,
    gamma_coupling: f64,
    omega_max: f64,
    modes: usize,
    temperature: f64,
    mu: f64,
) -> Result<ExtendedSystem> {
    let h_sys = CMatrix::from_element(1, 1, C64::new(epsilon, 0.0));
    assemble(
        h_sys,
        &[ReservoirSpec {
            temperature,
            chemical_potential: mu,
            spectral_density: SpectralDensity::Flat {
                strength: gamma_coupling,
                cutoff: omega_max,
            },
            modes,
            coupling_site: 0,
        }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fermi_dirac_reference_points() {
        assert!((fermi_dirac(0.3, 2.0, 0.3).unwrap() - 0.5).abs() < 1e-15);
        let one_k_t = fermi_dirac(1.0, 1.0, 0.0).unwrap();
        assert!((one_k_t - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-12);
        assert!(fermi_dirac(50.0, 1.0, 0.0).unwrap() < 1e-21);
        assert!(fermi_dirac(0.0, -1.0, 0.0).is_err());
        assert!(fermi_dirac(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn fermi_dirac_is_monotone_decreasing() {
        let mut prev = 1.0;
        for i in 0..200 {
            let eps = -10.0 + 0.1 * i as f64;
            let f = fermi_dirac(eps, 0.7, 0.2).unwrap();
            assert!(f < prev);
            assert!(f > 0.0 && f < 1.0);
            prev = f;
        }
    }

    fn flat_reservoir(strength: f64, cutoff: f64, modes: usize) -> ReservoirSpec {
        ReservoirSpec {
            temperature: 1.0,
            chemical_potential: 0.0,
            spectral_density: SpectralDensity::Flat { strength, cutoff },
            modes,
            coupling_site: 0,
        }
    }

    #[test]
    fn flat_discretization_two_modes() {
        let lead = discretize_lead(&flat_reservoir(1.0, 1.0, 2)).unwrap();
        assert_eq!(lead.energies, vec![-0.5, 0.5]);
        assert_eq!(lead.dampings, vec![1.0, 1.0]);
        let kappa = (1.0 / (2.0 * std::f64::consts::PI)).sqrt();
        assert!((lead.couplings[0] - kappa).abs() < 1e-15);
        assert!((lead.couplings[1] - kappa).abs() < 1e-15);
    }

    #[test]
    fn flat_discretization_spacing() {
        let lead = discretize_lead(&flat_reservoir(1.0, 1.0, 10)).unwrap();
        for w in lead.energies.windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 1e-15);
        }
        assert!((lead.dampings[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn decoupled_lead_has_zero_couplings() {
        let lead = discretize_lead(&flat_reservoir(0.0, 1.0, 5)).unwrap();
        assert!(lead.couplings.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn rejects_bad_leads() {
        assert!(discretize_lead(&flat_reservoir(1.0, 1.0, 0)).is_err());
        assert!(discretize_lead(&flat_reservoir(-1.0, 1.0, 3)).is_err());
    }

    #[test]
    fn coupling_sum_approximates_spectral_integral() {
        // sum_k kappa_k^2 should converge to int J dw / 2pi = Gamma w_max / pi
        let exact = 1.0 / std::f64::consts::PI;
        for l in [10, 100] {
            let lead = discretize_lead(&flat_reservoir(1.0, 1.0, l)).unwrap();
            let total: f64 = lead.couplings.iter().map(|k| k * k).sum();
            assert!(
                (total - exact).abs() <= exact / l as f64,
                "l={l}: {total} vs {exact}"
            );
        }
    }

    #[test]
    fn assemble_smallest_case() {
        let sys = single_dot_flat_lead(0.7, 1.0, 1.0, 1, 1.0, 0.0).unwrap();
        assert_eq!(sys.n(), 2);
        let h = sys.hamiltonian(0.0);
        assert!((h[(0, 0)].re - 0.7).abs() < 1e-15);
        assert!(h[(0, 1)].norm() > 0.0);
        assert!((h[(0, 1)] - h[(1, 0)].conj()).norm() < 1e-15);
    }

    #[test]
    fn assemble_fig4_dimensions_and_rates() {
        let sys = single_dot_flat_lead(0.25, 0.125, 1.0, 10, 1.0, 0.0625).unwrap();
        assert_eq!(sys.n(), 11);
        assert_eq!(sys.gamma()[0], 0.0);
        for k in 1..11 {
            assert!((sys.gamma()[k] - 0.2).abs() < 1e-15);
            let f = sys.f_occ()[k];
            assert!(f > 0.0 && f < 1.0);
        }
        sys.check_hermitian(&[0.0], 1e-12).unwrap();
    }

    #[test]
    fn rejects_out_of_range_coupling_site() {
        let h_sys = CMatrix::identity(1, 1);
        let mut res = flat_reservoir(1.0, 1.0, 2);
        res.coupling_site = 3;
        assert!(assemble(h_sys, &[res]).is_err());
    }

    #[test]
    fn split_hamiltonian_separates_coupling() {
        let sys = single_dot_flat_lead(0.3, 0.5, 1.0, 4, 1.0, 0.0).unwrap();
        let h = sys.hamiltonian(0.0);
        let (h0, hint) = sys.split_hamiltonian(&h);
        assert!(linalg::max_abs(&(&h0 + &hint - &h)) < 1e-15);
        // H_0 is block diagonal: no system-lead entries
        for m in 1..sys.n() {
            assert_eq!(h0[(0, m)], C64::new(0.0, 0.0));
            assert!(hint[(0, m)].norm() > 0.0);
        }
        // diagonal stays in H_0
        assert_eq!(hint[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(hint[(2, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn coupling_drive_scales_interaction_block() {
        let sys = single_dot_flat_lead(0.0, 0.8, 1.0, 3, 1.0, 0.0)
            .unwrap()
            .with_coupling_drive(0, Arc::new(|t: f64| t))
            .unwrap();
        let h0 = sys.hamiltonian(0.0);
        let h1 = sys.hamiltonian(1.0);
        let h2 = sys.hamiltonian(2.0);
        assert_eq!(h0[(0, 1)], C64::new(0.0, 0.0));
        assert!(((h2[(0, 1)] / h1[(0, 1)]).re - 2.0).abs() < 1e-12);
        // lead diagonal untouched by the drive
        assert_eq!(h0[(1, 1)], h2[(1, 1)]);
        sys.check_hermitian(&[0.0, 0.5, 1.7], 1e-12).unwrap();
    }

    #[test]
    fn tabulated_density_interpolates() {
        let sd = SpectralDensity::Tabulated {
            points: vec![(-1.0, 0.0), (0.0, 2.0), (1.0, 0.0)],
        };
        assert!((sd.value_at(-0.5) - 1.0).abs() < 1e-15);
        assert!((sd.value_at(0.25) - 1.5).abs() < 1e-15);
        assert_eq!(sd.value_at(2.0), 0.0);
    }
}
