use nalgebra::DVector;

use super::{Corridor, Footprint, OcpError};

/// Default hysteresis for moving a node into the next corridor, m.
pub const HYSTERESIS_MARGIN: f64 = 0.05;

/// Corridor index per shooting node: non-decreasing, unit steps at most.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorridorAssignment(Vec<usize>);

impl CorridorAssignment {
    pub fn new(indices: Vec<usize>) -> Result<Self, OcpError> {
        for w in indices.windows(2) {
            if w[1] < w[0] || w[1] > w[0] + 1 {
                return Err(OcpError::Invalid(format!(
                    "corridor assignment must be non-decreasing with unit steps: {indices:?}"
                )));
            }
        }
        Ok(Self(indices))
    }

    pub fn uniform(index: usize, len: usize) -> Self {
        Self(vec![index; len])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reassigns nodes as the horizon recedes.
///
/// Node `k` keeps `prev[k]` unless every footprint point of its warm-start
/// state lies inside corridor `prev[k] + 1` by more than `hysteresis`. The
/// result is made monotone again by lowering earlier promotions that are
/// followed by a non-promoted node.
pub fn assign_corridors(
    warm_start: &[DVector<f64>],
    corridors: &[Corridor],
    prev: &CorridorAssignment,
    footprint: &Footprint,
    hysteresis: f64,
) -> Result<CorridorAssignment, OcpError> {
    if warm_start.len() != prev.len() {
        return Err(OcpError::Invalid(format!(
            "warm start has {} nodes, assignment has {}",
            warm_start.len(),
            prev.len()
        )));
    }
    let mut out = Vec::with_capacity(prev.len());
    for (k, (x, &cur)) in warm_start.iter().zip(prev.indices()).enumerate() {
        let in_next = corridors
            .get(cur + 1)
            .map(|c| footprint.margin_in(c, x))
            .unwrap_or(f64::NEG_INFINITY);
        let in_cur = footprint.margin_in(&corridors[cur], x);
        if in_cur < 0.0 && in_next < 0.0 {
            return Err(OcpError::Assignment { node: k, current: cur });
        }
        out.push(if in_next > hysteresis { cur + 1 } else { cur });
    }
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] = out[k].min(out[k + 1]);
    }
    for k in 1..out.len() {
        out[k] = out[k].min(out[k - 1] + 1);
    }
    CorridorAssignment::new(out)
}

/// Greedy assignment for a cold start: walk the nodes and advance to the next
/// corridor whenever the footprint fits inside it with `hysteresis` to spare.
pub fn initial_assignment(
    states: &[DVector<f64>],
    corridors: &[Corridor],
    footprint: &Footprint,
    start: usize,
    hysteresis: f64,
) -> CorridorAssignment {
    let mut cur = start.min(corridors.len().saturating_sub(1));
    let mut out = Vec::with_capacity(states.len());
    for x in states {
        if let Some(next) = corridors.get(cur + 1) {
            if footprint.margin_in(next, x) > hysteresis {
                cur += 1;
            }
        }
        out.push(cur);
    }
    CorridorAssignment(out)
}

/// Carries an assignment made on the grid `prev_t0 + k·dt` over to the grid
/// `new_t0 + k·dt` with `n + 1` nodes; nodes past the old horizon repeat the
/// last entry.
pub fn resample_assignment(
    prev: &CorridorAssignment,
    prev_t0: f64,
    new_t0: f64,
    dt: f64,
    n: usize,
) -> CorridorAssignment {
    let last = prev.len() - 1;
    let out = (0..=n)
        .map(|k| {
            let s = (new_t0 + k as f64 * dt - prev_t0) / dt;
            let idx = (s + 1e-9).floor().max(0.0) as usize;
            prev.0[idx.min(last)]
        })
        .collect();
    CorridorAssignment(out)
}
