//! Nonparametric pairs bootstrap of the mediation pipeline with percentile
//! intervals.

use crate::data::MediationDataset;
use crate::mediation::{r2_mediation, Interval, MediationOptions, Quantity};
use crate::rng::{par_map_indexed, substream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failed-replicate share above which intervals are refused.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            level: 0.95,
            seed: 1,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BootstrapError {
    #[error("need at least 100 bootstrap replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("unreliable intervals: {failed} of {total} replicates failed")]
    Unreliable { failed: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub intervals: Vec<Interval>,
    pub n_used: usize,
    pub n_failed: usize,
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples subjects with replacement, reruns the whole pipeline on each
/// replicate and returns percentile intervals for `targets`.
///
/// A replicate fails when any fit fails or any target is undefined; failed
/// replicates are dropped and counted.
pub fn bootstrap_ci(
    ds: &MediationDataset,
    opts: &MediationOptions,
    cfg: &BootstrapConfig,
    targets: &[Quantity],
) -> Result<BootstrapResult, BootstrapError> {
    if cfg.replicates < 100 {
        return Err(BootstrapError::TooFewReplicates(cfg.replicates));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(BootstrapError::Level(cfg.level));
    }
    let n = ds.n();
    let draws: Vec<Option<Vec<f64>>> = par_map_indexed(cfg.replicates, cfg.threads, |b| {
        let mut rng = substream(cfg.seed, b as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let report = r2_mediation(&ds.take_rows(&idx), opts).ok()?;
        targets.iter().map(|&q| report.quantity(q)).collect()
    });

    let kept: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let n_failed = cfg.replicates - kept.len();
    if n_failed as f64 > MAX_FAILURE_SHARE * cfg.replicates as f64 {
        return Err(BootstrapError::Unreliable {
            failed: n_failed,
            total: cfg.replicates,
        });
    }
    let alpha = (1.0 - cfg.level) / 2.0;
    let intervals = targets
        .iter()
        .enumerate()
        .map(|(k, &quantity)| {
            let mut v: Vec<f64> = kept.iter().map(|d| d[k]).collect();
            v.sort_by(f64::total_cmp);
            Interval {
                quantity,
                lower: quantile_sorted(&v, alpha),
                upper: quantile_sorted(&v, 1.0 - alpha),
                level: cfg.level,
            }
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        n_used: kept.len(),
        n_failed,
    })
}
