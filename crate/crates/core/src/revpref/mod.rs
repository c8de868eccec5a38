//! Revealed-preference relations, GARP testing and the critical cost
//! efficiency index.
//!
//! Observation `s` directly reveals `q_s` preferred to `q_t` at efficiency `e`
//! when `e * x_s >= p_s . q_t`, with `x_s = p_s . q_s` the observed
//! expenditure, and strictly when `e * x_s > p_s . q_t`. Both comparisons
//! carry a relative slack of [`EPS_REL`]` * x_s`, which makes exact ties
//! non-strict.

mod bits;
mod incremental;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{AgentSeries, Observation, Panel};

pub use bits::{BitMatrix, WARSHALL_LIMIT};
pub use incremental::IncrementalGarp;

/// Relative slack on expenditure comparisons.
pub const EPS_REL: f64 = 1e-12;

/// Default bisection tolerance for [`compute_ccei`].
pub const DEFAULT_CCEI_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RevPrefError {
    #[error("efficiency {0} outside (0, 1]")]
    Efficiency(f64),
    #[error("ccei tolerance {0} outside (0, 0.1]")]
    Tolerance(f64),
    #[error("period {period} has non-positive expenditure {expenditure}")]
    ZeroExpenditure { period: usize, expenditure: f64 },
    #[error("observation has {found} goods, expected {expected}")]
    Goods { expected: usize, found: usize },
}

/// Direct, strict-direct and transitive revealed-preference relations of one
/// series at one efficiency level. Entry `(s, t)` reads "`q_s` over `q_t`".
#[derive(Debug, Clone)]
pub struct RevealedRelation {
    pub efficiency: f64,
    pub direct: BitMatrix,
    pub direct_strict: BitMatrix,
    pub closure: BitMatrix,
}

impl RevealedRelation {
    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }
}

#[inline]
pub(crate) fn weak_edge(e: f64, spent: f64, cost: f64) -> bool {
    e * spent >= cost - EPS_REL * spent
}

#[inline]
pub(crate) fn strict_edge(e: f64, spent: f64, cost: f64) -> bool {
    e * spent > cost + EPS_REL * spent
}

fn check_efficiency(e: f64) -> Result<(), RevPrefError> {
    if e > 0.0 && e <= 1.0 {
        Ok(())
    } else {
        Err(RevPrefError::Efficiency(e))
    }
}

/// Builds the relations from observations directly.
pub fn relations_of(
    obs: &[Observation],
    efficiency: f64,
) -> Result<RevealedRelation, RevPrefError> {
    check_efficiency(efficiency)?;
    let n = obs.len();
    let spent: Vec<f64> = obs.iter().map(Observation::expenditure).collect();
    let mut direct = BitMatrix::new(n);
    let mut direct_strict = BitMatrix::new(n);
    for (s, os) in obs.iter().enumerate() {
        for (t, ot) in obs.iter().enumerate() {
            let cost = os.cost_of(&ot.quantities);
            if weak_edge(efficiency, spent[s], cost) {
                direct.set(s, t);
            }
            if strict_edge(efficiency, spent[s], cost) {
                direct_strict.set(s, t);
            }
        }
    }
    let mut closure = direct.clone();
    closure.close_transitively();
    Ok(RevealedRelation {
        efficiency,
        direct,
        direct_strict,
        closure,
    })
}

pub fn build_relations(
    series: &AgentSeries,
    efficiency: f64,
) -> Result<RevealedRelation, RevPrefError> {
    relations_of(&series.observations, efficiency)
}

/// Outcome of a GARP test. A failing verdict carries a witness cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GarpVerdict {
    /// Observation indices `[s, u_1, ..., t]` (0-based) with each consecutive
    /// pair a direct edge and `t -> s` a strict direct edge.
    pub witness_cycle: Option<Vec<usize>>,
}

impl GarpVerdict {
    pub fn pass() -> Self {
        Self {
            witness_cycle: None,
        }
    }

    pub fn passes(&self) -> bool {
        self.witness_cycle.is_none()
    }

    /// Re-checks the witness edge by edge against `rel`.
    pub fn verify_witness(&self, rel: &RevealedRelation) -> bool {
        match &self.witness_cycle {
            None => true,
            Some(cycle) => {
                let (Some(&s), Some(&t)) = (cycle.first(), cycle.last()) else {
                    return false;
                };
                cycle.len() >= 2
                    && cycle.windows(2).all(|w| rel.direct.get(w[0], w[1]))
                    && rel.direct_strict.get(t, s)
            }
        }
    }
}

/// Finds a GARP violation in already built relations.
pub fn garp_verdict(rel: &RevealedRelation) -> GarpVerdict {
    let n = rel.len();
    for s in 0..n {
        for t in rel.closure.ones_in_row(s) {
            if rel.direct_strict.get(t, s) {
                return GarpVerdict {
                    witness_cycle: Some(shortest_path(&rel.direct, s, t)),
                };
            }
        }
    }
    GarpVerdict::pass()
}

/// Breadth-first path `from -> ... -> to` over direct edges, `from != to`.
fn shortest_path(direct: &BitMatrix, from: usize, to: usize) -> Vec<usize> {
    debug_assert_ne!(from, to);
    let mut parent = vec![usize::MAX; direct.len()];
    parent[from] = from;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for u in direct.ones_in_row(v) {
            if parent[u] == usize::MAX {
                parent[u] = v;
                queue.push_back(u);
            }
        }
    }
    assert_ne!(
        parent[to],
        usize::MAX,
        "closure edge {from}->{to} without a direct path"
    );
    let mut path = vec![to];
    let mut v = to;
    while v != from {
        v = parent[v];
        path.push(v);
    }
    path.reverse();
    path
}

pub fn check_garp(series: &AgentSeries, efficiency: f64) -> Result<GarpVerdict, RevPrefError> {
    Ok(garp_verdict(&build_relations(series, efficiency)?))
}

pub(crate) fn garp_passes(obs: &[Observation], efficiency: f64) -> Result<bool, RevPrefError> {
    Ok(garp_verdict(&relations_of(obs, efficiency)?).passes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CceiResult {
    pub ccei: f64,
    pub iterations: u32,
    pub tolerance: f64,
}

/// Largest efficiency at which the series satisfies GARP, by bisection.
///
/// Returns exactly 1.0 when GARP holds unadjusted. Otherwise the returned value
/// is a passing efficiency within `tolerance` of the failing upper bracket.
pub fn compute_ccei(series: &AgentSeries, tolerance: f64) -> Result<CceiResult, RevPrefError> {
    if !(tolerance > 0.0 && tolerance <= 0.1) {
        return Err(RevPrefError::Tolerance(tolerance));
    }
    for (i, o) in series.observations.iter().enumerate() {
        let expenditure = o.expenditure();
        if !(expenditure > 0.0) {
            return Err(RevPrefError::ZeroExpenditure {
                period: i + 1,
                expenditure,
            });
        }
    }
    let obs = &series.observations;
    if garp_passes(obs, 1.0)? {
        return Ok(CceiResult {
            ccei: 1.0,
            iterations: 0,
            tolerance,
        });
    }
    // GARP holds trivially as e -> 0 (no strict edges) and fails at 1.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if garp_passes(obs, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(CceiResult {
        ccei: lo,
        iterations,
        tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub passers: usize,
    pub total: usize,
    pub per_agent: Vec<GarpVerdict>,
}

impl PassRate {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passers as f64 / self.total as f64
        }
    }
}

/// GARP at full efficiency for every agent of the panel.
pub fn garp_pass_rate(panel: &Panel) -> PassRate {
    let per_agent: Vec<GarpVerdict> = panel
        .agents
        .par_iter()
        .map(|a| check_garp(a, 1.0).expect("efficiency 1 is in range"))
        .collect();
    PassRate {
        passers: per_agent.iter().filter(|v| v.passes()).count(),
        total: per_agent.len(),
        per_agent,
    }
}
