//! Deterministic ensemble orchestration.
//!
//! Trajectory `i` always consumes the RNG stream derived from
//! `(master_seed, i)`. Work is dispatched in fixed-size index batches to a
//! rayon pool; within a batch results are collected into an index-ordered
//! vector and handed to the caller sequentially. Outputs are therefore
//! byte-identical for any worker count, and memory stays bounded even when
//! per-trajectory event logs are kept.

use anyhow::Context;

const BATCH: u64 = 256;

/// Run `runner(i)` for `i in 0..n_traj` on `workers` threads (0 = all
/// available), delivering results to `on_result` in index order.
pub fn run_ensemble<T, F, M>(
    n_traj: u64,
    workers: usize,
    runner: F,
    mut on_result: M,
) -> anyhow::Result<()>
where
    T: Send,
    F: Fn(u64) -> anyhow::Result<T> + Sync,
    M: FnMut(u64, T) -> anyhow::Result<()>,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let mut start = 0u64;
    while start < n_traj {
        let end = (start + BATCH).min(n_traj);
        let indices: Vec<u64> = (start..end).collect();
        let results: Vec<(u64, anyhow::Result<T>)> = pool.install(|| {
            use rayon::prelude::*;
            indices.par_iter().map(|&i| (i, runner(i))).collect()
        });
        for (i, result) in results {
            let value = result.with_context(|| format!("trajectory {i} failed"))?;
            on_result(i, value)?;
        }
        start = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_arrive_in_index_order_for_any_worker_count() {
        for workers in [1, 4] {
            let mut seen = Vec::new();
            run_ensemble(
                600,
                workers,
                |i| Ok(i * 3),
                |i, v| {
                    seen.push((i, v));
                    Ok(())
                },
            )
            .unwrap();
            assert_eq!(seen.len(), 600);
            for (k, (i, v)) in seen.iter().enumerate() {
                assert_eq!(*i, k as u64);
                assert_eq!(*v, i * 3);
            }
        }
    }

    #[test]
    fn failures_name_the_trajectory() {
        let err = run_ensemble(
            10,
            2,
            |i| {
                if i == 7 {
                    anyhow::bail!("boom")
                } else {
                    Ok(i)
                }
            },
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(format!("{err:#}").contains("trajectory 7"));
    }

    #[test]
    fn zero_trajectories_is_a_no_op() {
        let mut called = false;
        run_ensemble(0, 1, |i| Ok(i), |_, _| {
            called = true;
            Ok(())
        })
        .unwrap();
        assert!(!called);
    }
}
