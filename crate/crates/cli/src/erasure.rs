//! Finite-time erasure of one bit stored in the occupation of a driven
//! fermionic mode.
//!
//! The bit mode starts at occupation 1/2 with a decoupled thermal lead. Its
//! energy is swept from `mu` to `epsilon_max` while the system-lead
//! coupling is switched on and off again:
//!
//! ```text
//! eps(t)   = mu + (eps_max - mu) (t/tau - sin(2 pi t/tau) / 2 pi)
//! Gamma(t) = (eps_max / pi) sin^2(pi t / tau)
//! ```
//!
//! After the drive the leads equilibrate for `tau_eq` with the coupling
//! off, closing the cycle. The dissipated heat of a trajectory is
//! `-dQ = -(dE - mu dN)`; its ensemble mean is bounded below by the
//! Landauer cost `T log 2`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use mesoleads::lead_model::{assemble, ExtendedSystem, ReservoirSpec, SpectralDensity};
use mesoleads::rng::trajectory_rng;
use mesoleads::trajectory::{run_trajectory, JumpEvent, TrajectoryOptions};
use mesoleads::unconditional::{evolve_with_currents, IntegratedCurrents};
use mesoleads::{gaussian, CMatrix, C64};
use serde::Serialize;

use crate::config::Config;
use crate::ensemble::run_ensemble;
use crate::report::{self, EventWriter};
use crate::stats::{EnsembleStats, NamedReports, Summary};

pub const QUANTITIES: [&str; 4] = ["minus_dQ", "dN", "dE", "dE_M"];

/// Drive protocol parameters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErasureProtocol {
    pub tau: f64,
    pub tau_eq: f64,
    pub epsilon_max: f64,
    pub mu: f64,
}

impl ErasureProtocol {
    /// Peak coupling strength `Gamma_max = eps_max / pi`.
    pub fn gamma_max(&self) -> f64 {
        self.epsilon_max / PI
    }

    pub fn t_end(&self) -> f64 {
        self.tau + self.tau_eq
    }

    /// `(eps(t), Gamma(t))`; the drive holds `(eps_max, 0)` during the
    /// equilibration phase.
    pub fn drive(&self, t: f64) -> Result<(f64, f64), mesoleads::Error> {
        if t < 0.0 || t > self.t_end() * (1.0 + 1e-12) {
            return Err(mesoleads::Error::TimeOutOfRange {
                t,
                t_end: self.t_end(),
            });
        }
        if t >= self.tau {
            return Ok((self.epsilon_max, 0.0));
        }
        let phase = t / self.tau;
        let eps = self.mu
            + (self.epsilon_max - self.mu) * (phase - (2.0 * PI * phase).sin() / (2.0 * PI));
        let gamma = self.gamma_max() * (PI * phase).sin().powi(2);
        Ok((eps, gamma))
    }
}

/// Assemble the driven extended system for one protocol duration. The
/// static coupling pattern is built at `Gamma_max` and scaled by
/// `sqrt(Gamma(t)/Gamma_max) = |sin(pi t/tau)|`.
pub fn build_system(cfg: &Config, protocol: ErasureProtocol) -> anyhow::Result<ExtendedSystem> {
    let h_sys = CMatrix::zeros(1, 1);
    let sys = assemble(
        h_sys,
        &[ReservoirSpec {
            temperature: cfg.lead.temperature,
            chemical_potential: cfg.lead.mu,
            spectral_density: SpectralDensity::Flat {
                strength: protocol.gamma_max(),
                cutoff: cfg.lead.omega_max,
            },
            modes: cfg.lead.modes,
            coupling_site: 0,
        }],
    )?
    .with_uniform_efficiency(cfg.lead.lambda_plus, cfg.lead.lambda_minus);

    let n = sys.n();
    let mut site_pattern = CMatrix::zeros(n, n);
    site_pattern[(0, 0)] = C64::new(1.0, 0.0);
    let p_eps = protocol;
    let p_kappa = protocol;
    let sys = sys
        .with_drive(
            site_pattern,
            Arc::new(move |t: f64| p_eps.drive(t).map(|d| d.0).unwrap_or(p_eps.epsilon_max)),
        )
        .with_coupling_drive(
            0,
            Arc::new(move |t: f64| {
                if t >= p_kappa.tau {
                    0.0
                } else {
                    (PI * t / p_kappa.tau).sin().abs()
                }
            }),
        )?;
    Ok(sys)
}

/// Uncorrelated initial state: bit mode at occupation 1/2, lead thermal.
pub fn initial_covariance(sys: &ExtendedSystem) -> CMatrix {
    let mut occ = vec![0.5];
    occ.extend((1..sys.n()).map(|k| sys.f_occ()[k]));
    gaussian::Covariance::from_occupations(&occ).into_matrix()
}

/// Erased target: empty bit mode, re-thermalized lead.
pub fn target_covariance(sys: &ExtendedSystem) -> CMatrix {
    let mut occ = vec![0.0];
    occ.extend((1..sys.n()).map(|k| sys.f_occ()[k]));
    gaussian::Covariance::from_occupations(&occ).into_matrix()
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatAgreement {
    /// Integrated external heat `dQ = dE - mu dN` (into the extended
    /// system, unconditional evolution).
    pub dq_external: f64,
    /// Integrated internal heat from the lead into the system.
    pub dq_internal: f64,
    /// `|dQ - dQ_S| / max(|dQ|, T)`.
    pub relative_mismatch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauReport {
    pub tau: f64,
    pub gamma_max_tau: f64,
    pub trajectories: u64,
    pub quantities: NamedReports<Summary>,
    pub fidelity_to_target: f64,
    pub heat_agreement: HeatAgreement,
    pub landauer_bound: f64,
}

pub struct TauOutcome {
    pub stats: EnsembleStats,
    pub report: TauReport,
    pub unconditional: IntegratedCurrents,
}

struct TrajOutput {
    values: [f64; 4],
    record: Option<Vec<JumpEvent>>,
}

fn one_trajectory(
    sys: &ExtendedSystem,
    c0: &CMatrix,
    t_end: f64,
    master_seed: u64,
    index: u64,
    opts: &TrajectoryOptions,
    keep_record: bool,
) -> anyhow::Result<TrajOutput> {
    let mut rng = trajectory_rng(master_seed, index);
    let traj = run_trajectory(sys, c0, 0.0, t_end, &mut rng, opts)?;
    Ok(TrajOutput {
        values: [
            -traj.total_heat(sys),
            traj.total_dn(),
            traj.total_de(),
            traj.total_de_m(),
        ],
        record: keep_record.then_some(traj.record),
    })
}

/// Run one protocol duration.
pub fn run_tau(
    cfg: &Config,
    tau: f64,
    events: Option<&mut EventWriter>,
) -> anyhow::Result<TauOutcome> {
    let protocol = ErasureProtocol {
        tau,
        tau_eq: cfg.protocol.tau_eq,
        epsilon_max: cfg.protocol.epsilon_max,
        mu: cfg.lead.mu,
    };
    let sys = build_system(cfg, protocol)?;
    let c0 = initial_covariance(&sys);
    let t_end = protocol.t_end();
    let opts = TrajectoryOptions::default();

    // unconditional reference: cycle heat agreement and target fidelity
    let unconditional = evolve_with_currents(&c0, 0.0, t_end, &sys, opts.tol)?;
    let dq_external: f64 = (0..sys.n_leads()).map(|a| unconditional.heat(&sys, a)).sum();
    let dq_internal: f64 = (0..sys.n_leads())
        .map(|a| unconditional.heat_internal(&sys, a))
        .sum();
    let mismatch =
        (dq_external - dq_internal).abs() / dq_external.abs().max(cfg.lead.temperature);
    let fidelity = gaussian::fidelity(&unconditional.c_final, &target_covariance(&sys))?;

    let mut stats = EnsembleStats::new(&QUANTITIES);
    let keep_records = events.is_some();
    let mut events = events;
    run_ensemble(
        cfg.run.trajectories,
        cfg.run.workers,
        |i| one_trajectory(&sys, &c0, t_end, cfg.run.seed, i, &opts, keep_records),
        |i, out| {
            stats.push(&out.values, false);
            if let (Some(w), Some(record)) = (events.as_deref_mut(), out.record) {
                w.append(i, &record)?;
            }
            Ok(())
        },
    )?;

    let mut quantities = NamedReports::new();
    for name in QUANTITIES {
        quantities.insert(name.to_string(), stats.summary(name));
    }
    let report = TauReport {
        tau,
        gamma_max_tau: protocol.gamma_max() * tau,
        trajectories: stats.count(),
        quantities,
        fidelity_to_target: fidelity,
        heat_agreement: HeatAgreement {
            dq_external,
            dq_internal,
            relative_mismatch: mismatch,
        },
        landauer_bound: cfg.lead.temperature * 2.0_f64.ln(),
    };
    Ok(TauOutcome {
        stats,
        report,
        unconditional,
    })
}

#[derive(Debug, Serialize)]
pub struct ErasureSummary {
    pub experiment: &'static str,
    pub parameters: Config,
    pub landauer_bound: f64,
    pub per_tau: Vec<TauReport>,
}

pub struct ErasureOutcome {
    pub summary: ErasureSummary,
    pub per_tau: Vec<TauOutcome>,
}

/// Run the full tau grid; per-duration outputs land in `tau_<k>/`
/// subdirectories when more than one duration is configured.
pub fn run(cfg: &Config, out_dir: Option<&Path>, emit_events: bool) -> anyhow::Result<ErasureOutcome> {
    let taus = cfg.tau_values();
    let mut per_tau = Vec::with_capacity(taus.len());
    for (k, &tau) in taus.iter().enumerate() {
        let subdir = match (out_dir, taus.len()) {
            (Some(dir), 1) => Some(dir.to_path_buf()),
            (Some(dir), _) => {
                let sub = dir.join(format!("tau_{k}"));
                std::fs::create_dir_all(&sub)?;
                Some(sub)
            }
            (None, _) => None,
        };
        let mut events = match (&subdir, emit_events) {
            (Some(dir), true) => Some(EventWriter::create(dir, cfg.run.seed)?.0),
            _ => None,
        };
        let outcome = run_tau(cfg, tau, events.as_mut())?;
        if let Some(w) = events {
            w.finish()?;
        }
        if let Some(dir) = &subdir {
            report::write_json(&dir.join("summary.json"), &outcome.report)?;
            report::write_stats_files(dir, &outcome.stats, cfg.run.bins, &[])?;
        }
        per_tau.push(outcome);
    }
    let summary = ErasureSummary {
        experiment: "erasure",
        parameters: cfg.clone(),
        landauer_bound: cfg.lead.temperature * 2.0_f64.ln(),
        per_tau: per_tau.iter().map(|o| o.report.clone()).collect(),
    };
    if let Some(dir) = out_dir {
        report::write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(ErasureOutcome { summary, per_tau })
}
