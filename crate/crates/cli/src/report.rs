//! File outputs: `summary.json`, `hist_<quantity>.csv`,
//! `convergence_<quantity>.csv` and optional `events_<seed>.csv`.
//!
//! All writers are deterministic: map keys are ordered, floats use Rust's
//! shortest round-trip formatting, and rows follow trajectory order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mesoleads::trajectory::JumpEvent;
use serde::Serialize;

use crate::config::BinSpec;
use crate::stats::{EnsembleStats, Histogram, IftCheckpoint};

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> anyhow::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "bin_left,bin_right,count")?;
    for (i, &count) in hist.counts.iter().enumerate() {
        writeln!(file, "{},{},{}", hist.edges[i], hist.edges[i + 1], count)?;
    }
    Ok(())
}

pub fn write_convergence_csv(path: &Path, trace: &[IftCheckpoint]) -> anyhow::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "n,estimator,se")?;
    for point in trace {
        writeln!(file, "{},{},{}", point.n, point.estimator, point.std_error)?;
    }
    Ok(())
}

/// Histograms for every quantity plus convergence traces for the entropy
/// productions.
pub fn write_stats_files(
    dir: &Path,
    stats: &EnsembleStats,
    bins: BinSpec,
    convergence_for: &[&str],
) -> anyhow::Result<()> {
    for name in stats.names() {
        let hist = stats.histogram(name, bins);
        write_histogram_csv(&dir.join(format!("hist_{name}.csv")), &hist)?;
    }
    for name in convergence_for {
        let trace = stats.ift_convergence(name, 200);
        write_convergence_csv(&dir.join(format!("convergence_{name}.csv")), &trace)?;
    }
    Ok(())
}

/// Streaming event log, one line per click.
pub struct EventWriter {
    file: BufWriter<File>,
}

impl EventWriter {
    pub fn create(dir: &Path, master_seed: u64) -> anyhow::Result<(Self, PathBuf)> {
        let path = dir.join(format!("events_{master_seed}.csv"));
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "trajectory,t,mode,sigma")?;
        Ok((Self { file }, path))
    }

    pub fn append(&mut self, trajectory: u64, record: &[JumpEvent]) -> anyhow::Result<()> {
        for ev in record {
            writeln!(
                self.file,
                "{},{},{},{}",
                trajectory,
                ev.time,
                ev.mode,
                ev.direction.symbol()
            )?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.file.flush()?;
        Ok(())
    }
}
