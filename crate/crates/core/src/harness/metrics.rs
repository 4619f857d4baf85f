use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schemes::{SchemeKind, UpdateOutcome};
use crate::simulator::{Outcome, SimLog};

/// Jumps smaller than this are not counted as trajectory jumps, m.
pub const JUMP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("log has no tick records")]
    NoTicks,
    #[error("log has no online solve records")]
    NoSolves,
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `⌈p/100 · n⌉` (1-based), clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    // Guard against p·n landing a hair above an integer.
    let rank = ((p / 100.0 * n as f64) - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            min: v[0],
            median: nearest_rank(&v, 50.0),
            p95: nearest_rank(&v, 95.0),
            p99: nearest_rank(&v, 99.0),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Bins of width `width` starting at zero.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    let Some(max) = values.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let bins = ((max / width).floor() as usize + 1).max(1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[((v / width).floor().max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 * width,
            upper: (i + 1) as f64 * width,
            count,
        })
        .collect()
}

/// Position error between the tracker set point and the true state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    /// Ticks that entered the statistics; emergency ticks are left out.
    pub samples: usize,
    pub norm: Stats,
    pub x: Stats,
    pub y: Stats,
    /// Absent for planar vehicles.
    pub z: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingMetrics {
    pub solve_time: Stats,
    /// Differences of consecutive online request times.
    pub update_interval: Option<Stats>,
    pub interval_histogram: Vec<HistogramBin>,
    /// Solves slower than `T_s`, which a full update rate cannot absorb.
    pub over_ts: usize,
    /// Solves slower than `δt`.
    pub over_delta: usize,
    /// Update period a low-update-rate scheme would need: the largest
    /// observed computation time.
    pub lur_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMetrics {
    pub switches: usize,
    pub max_position_jump: f64,
    /// Switches with a position jump above [`JUMP_THRESHOLD`].
    pub large_jumps: usize,
    /// Longest run of consecutive large jumps whose lateral components
    /// alternate in sign.
    pub longest_alternating_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub scheme: SchemeKind,
    pub seed: u64,
    pub outcome: Outcome,
    pub outcome_time: f64,
    pub ticks: usize,
    pub tracking: TrackingErrors,
    pub timing: Option<TimingMetrics>,
    pub jumps: JumpMetrics,
    pub deadline_misses: usize,
}

pub fn tracking_errors(log: &SimLog) -> Result<TrackingErrors, MetricsError> {
    let pos = log.position_indices();
    let mut per_axis: Vec<Vec<f64>> = vec![Vec::new(); pos.len()];
    let mut norm = Vec::new();
    for r in log.ticks.iter().filter(|r| !r.emergency) {
        let mut sq = 0.0;
        for (a, &i) in pos.iter().enumerate() {
            let e = r.x_ref[i] - r.x_true[i];
            per_axis[a].push(e.abs());
            sq += e * e;
        }
        norm.push(sq.sqrt());
    }
    if norm.is_empty() {
        return Err(MetricsError::NoTicks);
    }
    let stats = |v: &[f64]| Stats::of(v).expect("non-empty");
    Ok(TrackingErrors {
        samples: norm.len(),
        norm: stats(&norm),
        x: stats(&per_axis[0]),
        y: stats(&per_axis[1]),
        z: per_axis.get(2).map(|v| stats(v)),
    })
}

pub fn timing_metrics(log: &SimLog) -> Result<TimingMetrics, MetricsError> {
    let online: Vec<_> = log.online_solves().collect();
    if online.is_empty() {
        return Err(MetricsError::NoSolves);
    }
    let times: Vec<f64> = online.iter().map(|s| s.computation_time).collect();
    let intervals: Vec<f64> = online
        .windows(2)
        .map(|w| w[1].request_time - w[0].request_time)
        .collect();
    let solve_time = Stats::of(&times).expect("non-empty");
    Ok(TimingMetrics {
        solve_time,
        update_interval: Stats::of(&intervals),
        interval_histogram: histogram(&intervals, log.ts),
        over_ts: times.iter().filter(|&&t| t > log.ts).count(),
        over_delta: times.iter().filter(|&&t| t > log.delta).count(),
        lur_delta: solve_time.max,
    })
}

/// Length of the longest run of entries above `threshold` in magnitude whose
/// signs alternate.
pub fn longest_alternating_run(lateral: &[f64], threshold: f64) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev: Option<f64> = None;
    for &v in lateral {
        if v.abs() <= threshold {
            run = 0;
            prev = None;
            continue;
        }
        run = match prev {
            Some(p) if p.signum() != v.signum() => run + 1,
            _ => 1,
        };
        prev = Some(v);
        best = best.max(run);
    }
    best
}

pub fn jump_metrics(log: &SimLog) -> JumpMetrics {
    let switched: Vec<_> = log.online_solves().filter(|s| s.position_jump.is_some()).collect();
    let lateral: Vec<f64> = switched
        .iter()
        .filter(|s| s.position_jump.unwrap_or(0.0) > JUMP_THRESHOLD)
        .map(|s| s.lateral_jump.unwrap_or(0.0))
        .collect();
    JumpMetrics {
        switches: switched.len(),
        max_position_jump: switched.iter().filter_map(|s| s.position_jump).fold(0.0, f64::max),
        large_jumps: lateral.len(),
        longest_alternating_run: longest_alternating_run(&lateral, 0.0),
    }
}

/// Tracking, timing and jump statistics of a run.
pub fn tracking_error_metrics(log: &SimLog) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        scenario: log.scenario.clone(),
        scheme: log.scheme,
        seed: log.seed,
        outcome: log.outcome,
        outcome_time: log.outcome_time,
        ticks: log.ticks.len(),
        tracking: tracking_errors(log)?,
        timing: timing_metrics(log).ok(),
        jumps: jump_metrics(log),
        deadline_misses: log
            .online_solves()
            .filter(|s| s.outcome == UpdateOutcome::DeadlineMiss)
            .count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_on_hundred_values() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(nearest_rank(&v, 95.0), 0.95);
        assert_eq!(nearest_rank(&v, 99.0), 0.99);
        assert_eq!(nearest_rank(&v, 100.0), 1.0);
        assert_eq!(nearest_rank(&v, 0.0), 0.01);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.01, 0.02, 0.05], 0.02);
        assert_eq!(h.len(), 3);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(h[0].count, 2);
    }

    #[test]
    fn alternating_runs() {
        assert_eq!(longest_alternating_run(&[0.1, -0.1, 0.1, 0.1, -0.2], 0.01), 3);
        assert_eq!(longest_alternating_run(&[0.1, 0.001, -0.1], 0.01), 1);
        assert_eq!(longest_alternating_run(&[], 0.01), 0);
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_and_index(
            mut v in prop::collection::vec(-1e3f64..1e3, 1..200),
            p in 0.0f64..=100.0,
        ) {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            // Smallest value with at least p percent of the sample at or below it.
            let oracle = v
                .iter()
                .enumerate()
                .find(|(i, _)| (i + 1) as f64 * 100.0 >= p * n as f64 - 1e-7)
                .map(|(_, x)| *x)
                .unwrap();
            prop_assert_eq!(nearest_rank(&v, p), oracle);
            let s = Stats::of(&v).unwrap();
            prop_assert!(s.p99 >= s.p95 && s.p95 >= s.median && s.min <= s.median);
        }
    }
}
