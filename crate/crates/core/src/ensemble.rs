//! Monte Carlo ensembles and their statistics.
//!
//! Paths are simulated in fixed-size chunks of consecutive indices. Each
//! chunk accumulates means and squared deviations with Welford's update in
//! index order; chunks are then combined left to right with the pairwise
//! formula of Chan et al. The result depends only on the seed and the number
//! of paths, never on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, StateVec};
use crate::sde::{simulate_path, PathResult, SimConfig};

/// Paths per work unit.
pub const CHUNK: usize = 32;

/// Largest tolerated fraction of failed paths.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Running mean and sum of squared deviations per recorded time and variable.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    pub count: usize,
    pub mean: Vec<[f64; 4]>,
    pub m2: Vec<[f64; 4]>,
}

impl MomentAccumulator {
    pub fn new(n_times: usize) -> Self {
        Self {
            count: 0,
            mean: vec![[0.0; 4]; n_times],
            m2: vec![[0.0; 4]; n_times],
        }
    }

    pub fn push(&mut self, states: &[StateVec]) {
        self.count += 1;
        let n = self.count as f64;
        for (k, s) in states.iter().enumerate() {
            let x = s.to_array();
            for v in 0..4 {
                let d = x[v] - self.mean[k][v];
                self.mean[k][v] += d / n;
                self.m2[k][v] += d * (x[v] - self.mean[k][v]);
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            for v in 0..4 {
                let d = other.mean[k][v] - self.mean[k][v];
                self.mean[k][v] += d * nb / n;
                self.m2[k][v] += other.m2[k][v] + d * d * na * nb / n;
            }
        }
        self.count += other.count;
    }

    /// Sample standard deviation (n - 1 denominator); zero for one path.
    pub fn std(&self) -> Vec<[f64; 4]> {
        let denom = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|r| r.map(|m| (m.max(0.0) / denom).sqrt())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub mean_ts: Vec<[f64; 4]>,
    pub std_ts: Vec<[f64; 4]>,
    /// End-time states of the contributing paths, in path order.
    pub end_samples: Vec<StateVec>,
    /// States at each requested snapshot time, in path order.
    pub snapshots: Vec<(f64, Vec<StateVec>)>,
    /// Contributing paths.
    pub n_paths: usize,
    pub n_failed: usize,
    /// Paths that reached M_i = B = 0.
    pub n_absorbed: usize,
    /// Paths on which B hit 0 at least once.
    pub n_b_zero: usize,
    pub config: SimConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleOptions {
    /// Times at which every path's state is retained; each must be a
    /// recorded time.
    pub snapshot_times: Vec<f64>,
    /// Keep the first few full paths (for plotting sample realisations).
    pub keep_paths: usize,
}

struct ChunkResult {
    acc: MomentAccumulator,
    ends: Vec<StateVec>,
    snaps: Vec<Vec<StateVec>>,
    failed: usize,
    absorbed: usize,
    b_zero: usize,
    kept: Vec<PathResult>,
}

pub fn run_ensemble(init: StateVec, params: &ModelParams, config: &SimConfig, n_paths: usize) -> Result<EnsembleSummary> {
    run_ensemble_with(init, params, config, n_paths, &EnsembleOptions::default()).map(|(s, _)| s)
}

/// As [`run_ensemble`], also returning the first `options.keep_paths` paths.
pub fn run_ensemble_with(
    init: StateVec,
    params: &ModelParams,
    config: &SimConfig,
    n_paths: usize,
    options: &EnsembleOptions,
) -> Result<(EnsembleSummary, Vec<PathResult>)> {
    if n_paths < 2 {
        return Err(Error::Domain(format!("n_paths = {n_paths}, need at least 2")));
    }
    config.validate()?;
    init.validate()?;
    params.validate()?;
    let times = config.record_times();
    let snap_idx: Vec<usize> = options
        .snapshot_times
        .iter()
        .map(|&t| {
            times
                .iter()
                .position(|&r| (r - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| Error::Domain(format!("snapshot time {t} is not a recorded time")))
        })
        .collect::<Result<_>>()?;

    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunks: Vec<Result<ChunkResult>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = ChunkResult {
                acc: MomentAccumulator::new(times.len()),
                ends: Vec::with_capacity(CHUNK),
                snaps: vec![Vec::with_capacity(CHUNK); snap_idx.len()],
                failed: 0,
                absorbed: 0,
                b_zero: 0,
                kept: Vec::new(),
            };
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let path = simulate_path(init, params, config, i as u64)?;
                if path.failed_at.is_some() {
                    r.failed += 1;
                    continue;
                }
                r.acc.push(&path.states);
                r.ends.push(*path.states.last().expect("nonempty path"));
                for (slot, &k) in r.snaps.iter_mut().zip(&snap_idx) {
                    slot.push(path.states[k]);
                }
                r.absorbed += path.absorbed_at.is_some() as usize;
                r.b_zero += path.b_zero_at.is_some() as usize;
                if i < options.keep_paths {
                    r.kept.push(path);
                }
            }
            Ok(r)
        })
        .collect();

    let mut acc = MomentAccumulator::new(times.len());
    let mut end_samples = Vec::with_capacity(n_paths);
    let mut snaps: Vec<Vec<StateVec>> = vec![Vec::with_capacity(n_paths); snap_idx.len()];
    let (mut failed, mut absorbed, mut b_zero) = (0, 0, 0);
    let mut kept = Vec::new();
    for chunk in chunks {
        let c = chunk?;
        acc.merge(&c.acc);
        end_samples.extend(c.ends);
        for (all, part) in snaps.iter_mut().zip(c.snaps) {
            all.extend(part);
        }
        failed += c.failed;
        absorbed += c.absorbed;
        b_zero += c.b_zero;
        kept.extend(c.kept);
    }
    if failed as f64 > MAX_FAILURE_FRACTION * n_paths as f64 {
        return Err(Error::Ensemble {
            failed,
            total: n_paths,
        });
    }
    let std_ts = acc.std();
    let summary = EnsembleSummary {
        times,
        mean_ts: acc.mean,
        std_ts,
        end_samples,
        snapshots: options.snapshot_times.iter().copied().zip(snaps).collect(),
        n_paths: acc.count,
        n_failed: failed,
        n_absorbed: absorbed,
        n_b_zero: b_zero,
        config: *config,
    };
    Ok((summary, kept))
}

/// Component `var` (0 = M_u, 1 = M_i, 2 = B, 3 = T) of each state.
pub fn column(states: &[StateVec], var: usize) -> Vec<f64> {
    states.iter().map(|s| s.to_array()[var]).collect()
}

pub const VARIABLE_NAMES: [&str; 4] = ["M_u", "M_i", "B", "T"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub variable: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const DEFAULT_BINS: usize = 100;

/// Equal-width bins on `[min, max]`; the maximum goes in the last bin. If
/// all samples coincide the result is one narrow bin around that value.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::Domain("histogram of no samples".into()));
    }
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("histogram of non-finite samples".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let half = if lo == 0.0 { 0.5 } else { lo.abs() * 1e-9 };
        return Ok(Histogram {
            variable: String::new(),
            bin_edges: vec![lo - half, lo + half],
            counts: vec![samples.len()],
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    bin_edges[bins] = hi;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        variable: String::new(),
        bin_edges,
        counts,
    })
}

impl Histogram {
    pub fn named(mut self, variable: &str) -> Self {
        self.variable = variable.to_string();
        self
    }

    /// Index of the fullest bin (the first one on ties).
    pub fn mode_bin(&self) -> usize {
        let max = *self.counts.iter().max().unwrap_or(&0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Mean, sample standard deviation (n - 1) and median.
pub fn summary_stats(samples: &[f64]) -> Result<SummaryStats> {
    if samples.is_empty() {
        return Err(Error::Domain("statistics of no samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    let std = if samples.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    };
    Ok(SummaryStats { mean, std, median })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    /// 1-based.
    pub rank: usize,
    pub first: f64,
    pub second: f64,
    pub diff: f64,
}

/// Pairs the order statistics of two equally sized samples.
pub fn rank_diff(first: &[f64], second: &[f64]) -> Result<Vec<RankRow>> {
    if first.len() != second.len() {
        return Err(Error::Domain(format!(
            "rank comparison of {} and {} samples",
            first.len(),
            second.len()
        )));
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sorted(first), sorted(second));
    Ok(a.iter()
        .zip(&b)
        .enumerate()
        .map(|(i, (&x, &y))| RankRow {
            rank: i + 1,
            first: x,
            second: y,
            diff: y - x,
        })
        .collect())
}
