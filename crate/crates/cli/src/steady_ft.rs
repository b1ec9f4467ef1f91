//! Steady-state fluctuation-theorem experiment: a single dot coupled to one
//! mesoscopic lead, prepared in the stationary state, monitored over a span
//! `tau` inside a two-point measurement sandwich. Produces the full
//! distributions of the three entropy productions and their IFT estimators.

use std::path::Path;

use anyhow::Context;
use mesoleads::lead_model::{single_dot_flat_lead, ExtendedSystem};
use mesoleads::rng::trajectory_rng;
use mesoleads::tpm::{self, MeasurementBasis};
use mesoleads::trajectory::{run_trajectory, JumpEvent, TrajectoryOptions};
use mesoleads::unconditional::steady_state;
use mesoleads::{gaussian, CMatrix};
use serde::Serialize;

use crate::config::Config;
use crate::ensemble::run_ensemble;
use crate::report::{self, EventWriter};
use crate::stats::{EnsembleStats, IftReport, NamedReports, Summary};

pub const QUANTITIES: [&str; 8] = [
    "S_tot", "S_unc", "S_mart", "S_tot_mod", "dN", "dE", "dE_M", "dQ",
];
pub const IFT_QUANTITIES: [&str; 3] = ["S_tot", "S_unc", "S_mart"];

pub fn build_system(cfg: &Config) -> anyhow::Result<ExtendedSystem> {
    let sys = single_dot_flat_lead(
        cfg.system.epsilon,
        cfg.lead.gamma,
        cfg.lead.omega_max,
        cfg.lead.modes,
        cfg.lead.temperature,
        cfg.lead.mu,
    )?
    .with_uniform_efficiency(cfg.lead.lambda_plus, cfg.lead.lambda_minus);
    Ok(sys)
}

struct TrajOutput {
    values: [f64; 8],
    floored: bool,
    record: Option<Vec<JumpEvent>>,
}

/// One TPM-sandwiched trajectory: first measurement, conditional evolution,
/// second measurement, entropy bookkeeping.
#[allow(clippy::too_many_arguments)]
fn one_trajectory(
    sys: &ExtendedSystem,
    basis: &MeasurementBasis,
    c_ss: &CMatrix,
    tau: f64,
    master_seed: u64,
    index: u64,
    opts: &TrajectoryOptions,
    keep_record: bool,
) -> anyhow::Result<TrajOutput> {
    let mut rng = trajectory_rng(master_seed, index);
    let (bits0, log_p0, c_r0) = tpm::sample_initial(basis, &mut rng);
    let traj = run_trajectory(sys, &c_r0, 0.0, tau, &mut rng, opts)?;
    let (bits_m, log_p_cond) = tpm::sample_final(basis, &traj.c_final, &mut rng)?;
    let log_p_unc = tpm::eigen_log_probability(basis, &bits_m);
    let log_overlap = gaussian::log_overlap(&traj.c_final, c_ss)?;
    let sample = tpm::entropy_productions(
        bits0,
        bits_m,
        log_p0,
        log_p_unc,
        log_p_cond,
        log_overlap,
        traj.total_sigma(),
    );
    let de_m_over_t: f64 = (0..sys.n_leads())
        .map(|a| traj.de_m[a] / sys.reservoir(a).temperature)
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(TrajOutput {
        values: [
            sample.s_tot,
            sample.s_unc,
            sample.s_mart,
            sample.modified_total(de_m_over_t),
            traj.total_dn(),
            traj.total_de(),
            traj.total_de_m(),
            traj.total_heat(sys),
        ],
        floored: sample.floored,
        record: keep_record.then_some(traj.record),
    })
}

#[derive(Debug, Serialize)]
pub struct SteadyFtSummary {
    pub experiment: &'static str,
    pub parameters: Config,
    pub trajectories: u64,
    pub floored_samples: u64,
    pub quantities: NamedReports<Summary>,
    pub ift: NamedReports<IftReport>,
}

pub struct SteadyFtOutcome {
    pub stats: EnsembleStats,
    pub summary: SteadyFtSummary,
}

/// Run the experiment; when `out_dir` is given, write `summary.json`,
/// histograms, convergence traces, and (optionally) the event log there.
pub fn run(cfg: &Config, out_dir: Option<&Path>, emit_events: bool) -> anyhow::Result<SteadyFtOutcome> {
    let sys = build_system(cfg)?;
    let c_ss = steady_state(&sys, 0.0).context("solving the stationary state")?;
    // Both projective measurements act in the stationary eigenbasis: the
    // unconditional state at tau equals the initial one.
    let basis = MeasurementBasis::of(&c_ss);
    let opts = TrajectoryOptions::default();
    let tau = cfg.protocol.tau;

    let mut stats = EnsembleStats::new(&QUANTITIES);
    let mut events = match (out_dir, emit_events) {
        (Some(dir), true) => Some(EventWriter::create(dir, cfg.run.seed)?.0),
        _ => None,
    };
    run_ensemble(
        cfg.run.trajectories,
        cfg.run.workers,
        |i| {
            one_trajectory(
                &sys,
                &basis,
                &c_ss,
                tau,
                cfg.run.seed,
                i,
                &opts,
                emit_events,
            )
        },
        |i, out| {
            stats.push(&out.values, out.floored);
            if let (Some(w), Some(record)) = (events.as_mut(), out.record) {
                w.append(i, &record)?;
            }
            Ok(())
        },
    )?;
    if let Some(w) = events {
        w.finish()?;
    }

    let mut quantities = NamedReports::new();
    for name in QUANTITIES {
        quantities.insert(name.to_string(), stats.summary(name));
    }
    let mut ift = NamedReports::new();
    for name in IFT_QUANTITIES {
        ift.insert(name.to_string(), stats.ift(name));
    }
    let summary = SteadyFtSummary {
        experiment: "steady-ft",
        parameters: cfg.clone(),
        trajectories: stats.count(),
        floored_samples: stats.floored(),
        quantities,
        ift,
    };
    if let Some(dir) = out_dir {
        report::write_json(&dir.join("summary.json"), &summary)?;
        report::write_stats_files(dir, &stats, cfg.run.bins, &IFT_QUANTITIES)?;
    }
    Ok(SteadyFtOutcome { stats, summary })
}
