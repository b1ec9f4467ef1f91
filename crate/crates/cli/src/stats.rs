//! Ensemble statistics: per-quantity sample stores, summaries, histograms,
//! and fluctuation-theorem estimators.
//!
//! Samples are kept in trajectory order, so merging two stats objects is
//! concatenation and every derived number (mean, histogram, convergence
//! trace) is independent of how the ensemble was scheduled.

use std::collections::BTreeMap;

use mesoleads::tpm::IftEstimator;
use serde::Serialize;

use crate::config::BinSpec;

/// Ordered per-quantity sample columns plus run counters.
#[derive(Debug, Clone, Default)]
pub struct EnsembleStats {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    count: u64,
    floored: u64,
}

impl EnsembleStats {
    pub fn new(names: &[&str]) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
            count: 0,
            floored: 0,
        }
    }

    /// Append one trajectory's values (same order as `names`).
    pub fn push(&mut self, values: &[f64], floored: bool) {
        assert_eq!(values.len(), self.columns.len());
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
        self.count += 1;
        self.floored += floored as u64;
    }

    /// Concatenate another stats object (its trajectories follow ours).
    pub fn merge(&mut self, other: EnsembleStats) {
        assert_eq!(self.names, other.names);
        for (dst, src) in self.columns.iter_mut().zip(other.columns) {
            dst.extend(src);
        }
        self.count += other.count;
        self.floored += other.floored;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn floored(&self) -> u64 {
        self.floored
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn samples(&self, name: &str) -> &[f64] {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown quantity {name}"));
        &self.columns[idx]
    }

    pub fn summary(&self, name: &str) -> Summary {
        summarize(self.samples(name))
    }

    pub fn histogram(&self, name: &str, bins: BinSpec) -> Histogram {
        histogram(self.samples(name), bins)
    }

    pub fn ift(&self, name: &str) -> IftReport {
        let mut est = IftEstimator::new();
        for &s in self.samples(name) {
            est.push(s);
        }
        IftReport::from(&est)
    }

    /// Running IFT estimator checkpoints (log-spaced up to `n`).
    pub fn ift_convergence(&self, name: &str, points: usize) -> Vec<IftCheckpoint> {
        let samples = self.samples(name);
        let n = samples.len();
        if n < 2 {
            return Vec::new();
        }
        let mut checkpoints: Vec<usize> = (0..points)
            .map(|i| {
                let frac = (i + 1) as f64 / points as f64;
                ((n as f64).powf(frac)).round() as usize
            })
            .filter(|&k| k >= 2)
            .collect();
        checkpoints.dedup();
        if checkpoints.last() != Some(&n) {
            checkpoints.push(n);
        }
        let mut est = IftEstimator::new();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        for (i, &s) in samples.iter().enumerate() {
            est.push(s);
            if next.peek() == Some(&&(i + 1)) {
                next.next();
                out.push(IftCheckpoint {
                    n: (i + 1) as u64,
                    estimator: est.mean(),
                    std_error: est.standard_error(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Summary {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            count: 0,
            mean: f64::NAN,
            variance: f64::NAN,
            std_error: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        count: n as u64,
        mean,
        variance,
        std_error: (variance / n as f64).sqrt(),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IftReport {
    pub n: u64,
    pub estimator: f64,
    pub std_error: f64,
    pub s_mean: f64,
    pub s_std_error: f64,
}

impl From<&IftEstimator> for IftReport {
    fn from(est: &IftEstimator) -> Self {
        Self {
            n: est.count(),
            estimator: est.mean(),
            std_error: est.standard_error(),
            s_mean: est.s_mean(),
            s_std_error: est.s_standard_error(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IftCheckpoint {
    pub n: u64,
    pub estimator: f64,
    pub std_error: f64,
}

/// Fixed-width histogram. `edges` has one more entry than `counts`;
/// underflow/overflow are clamped into the edge bins so the counts always
/// sum to the sample count.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Build a histogram; `BinSpec::Auto` uses the Freedman-Diaconis width
/// `2 IQR / n^(1/3)` (falling back to a single bin for degenerate data).
pub fn histogram(xs: &[f64], bins: BinSpec) -> Histogram {
    if xs.is_empty() {
        return Histogram {
            edges: vec![0.0, 1.0],
            counts: vec![0],
        };
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let n_bins = match bins {
        BinSpec::Count(k) => k.max(1),
        BinSpec::Auto => {
            let n = sorted.len();
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let width = 2.0 * iqr / (n as f64).cbrt();
            if width <= 0.0 || hi <= lo {
                1
            } else {
                (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
            }
        }
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| lo + span * i as f64 / n_bins as f64)
        .collect();
    let mut counts = vec![0u64; n_bins];
    for &x in xs {
        let mut idx = ((x - lo) / span * n_bins as f64) as usize;
        if idx >= n_bins {
            idx = n_bins - 1;
        }
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Named estimator map with stable ordering for JSON reports.
pub type NamedReports<T> = BTreeMap<String, T>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_equals_concatenation() {
        let mut a = EnsembleStats::new(&["x", "y"]);
        let mut b = EnsembleStats::new(&["x", "y"]);
        let mut whole = EnsembleStats::new(&["x", "y"]);
        for i in 0..10 {
            let row = [i as f64, (i * i) as f64];
            if i < 4 {
                a.push(&row, i == 2);
            } else {
                b.push(&row, false);
            }
            whole.push(&row, i == 2);
        }
        a.merge(b);
        assert_eq!(a.count(), whole.count());
        assert_eq!(a.floored(), whole.floored());
        assert_eq!(a.samples("x"), whole.samples("x"));
        assert_eq!(a.samples("y"), whole.samples("y"));
        let ha = a.histogram("y", BinSpec::Auto);
        let hw = whole.histogram("y", BinSpec::Auto);
        assert_eq!(ha.counts, hw.counts);
        assert_eq!(ha.edges, hw.edges);
    }

    #[test]
    fn histogram_counts_sum_to_sample_count() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.13).collect();
        for bins in [BinSpec::Auto, BinSpec::Count(7), BinSpec::Count(1)] {
            let h = histogram(&xs, bins);
            assert_eq!(h.counts.iter().sum::<u64>(), 1000);
            assert_eq!(h.edges.len(), h.counts.len() + 1);
        }
    }

    #[test]
    fn degenerate_data_gets_single_bin() {
        let xs = vec![2.5; 50];
        let h = histogram(&xs, BinSpec::Auto);
        assert_eq!(h.counts, vec![50]);
    }

    #[test]
    fn summary_reference_values() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);
    }

    #[test]
    fn convergence_trace_is_monotone_in_n() {
        let mut stats = EnsembleStats::new(&["s"]);
        for i in 0..500 {
            stats.push(&[(i % 7) as f64 * 0.1], false);
        }
        let trace = stats.ift_convergence("s", 20);
        assert!(!trace.is_empty());
        assert_eq!(trace.last().unwrap().n, 500);
        for w in trace.windows(2) {
            assert!(w[1].n > w[0].n);
        }
    }

    #[test]
    fn empty_stats_merge_is_identity() {
        let mut a = EnsembleStats::new(&["x"]);
        let b = EnsembleStats::new(&["x"]);
        a.push(&[1.0], false);
        let before = a.samples("x").to_vec();
        a.merge(b);
        assert_eq!(a.samples("x"), before.as_slice());
        assert_eq!(a.count(), 1);
    }
}
