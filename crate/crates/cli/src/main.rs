//! Command-line front end for the mesoscopic-leads trajectory sampler.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mesoleads_cli::config::{BinSpec, Config};
use mesoleads_cli::{erasure, steady_ft, unconditional_run};

#[derive(Parser)]
#[command(name = "mesoleads", version, about = "Quantum-jump trajectory sampling for fermionic open systems with mesoscopic leads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state entropy-production statistics and fluctuation theorems.
    SteadyFt(RunArgs),
    /// Finite-time bit erasure: dissipated-heat distributions over a grid
    /// of drive durations.
    Erasure(RunArgs),
    /// Ensemble-average dynamics of the configured system (no sampling).
    Unconditional(RunArgs),
    /// Cross-check the covariance engine against the dense Fock-space
    /// reference on a small system.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override [run] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override [run] trajectories.
    #[arg(long)]
    trajectories: Option<u64>,
    /// Override [run] workers (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write a per-trajectory event log (one line per detector click).
    #[arg(long)]
    emit_events: bool,
    /// Histogram bins: a number or "auto".
    #[arg(long)]
    bins: Option<String>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<Config> {
        let mut cfg = Config::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(n) = self.trajectories {
            cfg.run.trajectories = n;
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(bins) = &self.bins {
            cfg.run.bins = if bins == "auto" {
                BinSpec::Auto
            } else {
                BinSpec::Count(bins.parse().context("--bins takes a number or \"auto\"")?)
            };
        }
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Number of locked seeds to compare.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Trajectory span in units of the slowest damping time.
    #[arg(long, default_value_t = 10.0)]
    span: f64,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SteadyFt(args) => {
            let cfg = args.load()?;
            let outcome = steady_ft::run(&cfg, Some(&args.out), args.emit_events)?;
            println!(
                "steady-ft: {} trajectories, {} floored",
                outcome.summary.trajectories, outcome.summary.floored_samples
            );
            for (name, ift) in &outcome.summary.ift {
                println!(
                    "  <e^-{name}> = {:.6} +- {:.6}   <{name}> = {:.6} +- {:.6}",
                    ift.estimator, ift.std_error, ift.s_mean, ift.s_std_error
                );
            }
            println!("wrote {}", args.out.join("summary.json").display());
        }
        Command::Erasure(args) => {
            let cfg = args.load()?;
            let outcome = erasure::run(&cfg, Some(&args.out), args.emit_events)?;
            println!(
                "erasure: Landauer bound T log 2 = {:.6}",
                outcome.summary.landauer_bound
            );
            for tau in &outcome.summary.per_tau {
                let heat = &tau.quantities["minus_dQ"];
                println!(
                    "  Gamma_max tau = {:>8.3}: <-dQ> = {:.6} +- {:.6}, var = {:.3e}, fidelity = {:.6}, heat mismatch = {:.4}",
                    tau.gamma_max_tau,
                    heat.mean,
                    heat.std_error,
                    heat.variance,
                    tau.fidelity_to_target,
                    tau.heat_agreement.relative_mismatch
                );
            }
            println!("wrote {}", args.out.join("summary.json").display());
        }
        Command::Unconditional(args) => {
            let cfg = args.load()?;
            let summary = unconditional_run::run(&cfg, &args.out)?;
            println!(
                "unconditional: final dot occupation {:.6}, distance to steady state {:.3e}",
                summary.final_dot_occupation, summary.distance_to_steady_state
            );
            println!("wrote {}", args.out.join("timeline.csv").display());
        }
        Command::OracleCheck(args) => {
            oracle_check(args.seeds, args.span)?;
        }
    }
    Ok(())
}

/// Seed-locked comparison of the two engines on a 3-mode dot-plus-lead
/// system, plus an unconditional propagation check.
fn oracle_check(seeds: u64, span: f64) -> anyhow::Result<()> {
    use mesoleads::lead_model::single_dot_flat_lead;
    use mesoleads::linalg;
    use mesoleads::ode::Tolerances;
    use mesoleads::oracle::{dense_trajectory, DenseOracle};
    use mesoleads::rng::trajectory_rng;
    use mesoleads::trajectory::{run_trajectory, TrajectoryOptions};
    use mesoleads::unconditional::{evolve_final, steady_state};

    let sys = single_dot_flat_lead(0.25, 0.5, 1.0, 2, 1.0, 0.0625)?;
    let c_ss = steady_state(&sys, 0.0)?;
    let oracle = DenseOracle::new(&sys)?;
    let rho_ss = oracle.fock.gaussian_state(&c_ss);
    let opts = TrajectoryOptions::default();

    let tol = Tolerances {
        rtol: 1e-10,
        atol: 1e-13,
    };
    let c_unc = evolve_final(&c_ss, 0.0, span, &sys, tol)?;
    let rho_unc = oracle.evolve(&rho_ss, 0.0, span, tol)?;
    let unc_err = linalg::max_abs(&(oracle.covariance(&rho_unc) - &c_unc));
    let unc_ok = unc_err < 1e-8;
    println!(
        "{} unconditional propagation: max |C - C_dense| = {unc_err:.3e}",
        if unc_ok { "PASS" } else { "FAIL" }
    );

    let mut worst_state = 0.0_f64;
    let mut record_mismatches = 0u64;
    let mut total_jumps = 0u64;
    for seed in 0..seeds {
        let mut rng = trajectory_rng(0xC0FFEE, seed);
        let traj = run_trajectory(&sys, &c_ss, 0.0, span, &mut rng, &opts)?;
        let mut rng = trajectory_rng(0xC0FFEE, seed);
        let (record, rho_r) = dense_trajectory(&sys, &rho_ss, 0.0, span, &mut rng, &opts)?;
        total_jumps += record.len() as u64;
        let same = traj.record.len() == record.len()
            && traj
                .record
                .iter()
                .zip(&record)
                .all(|(a, b)| {
                    a.mode == b.mode
                        && a.direction == b.direction
                        && (a.time - b.time).abs() < 1e-6
                });
        if !same {
            record_mismatches += 1;
        }
        worst_state = worst_state.max(linalg::max_abs(&(oracle.covariance(&rho_r) - &traj.c_final)));
    }
    let records_ok = record_mismatches == 0;
    println!(
        "{} seed-locked records: {seeds} seeds, {total_jumps} jumps, {record_mismatches} mismatching records",
        if records_ok { "PASS" } else { "FAIL" }
    );
    let state_ok = worst_state < 1e-6;
    println!(
        "{} conditional states: max |C^r - C^r_dense| = {worst_state:.3e}",
        if state_ok { "PASS" } else { "FAIL" }
    );
    anyhow::ensure!(unc_ok && records_ok && state_ok, "oracle check failed");
    Ok(())
}
