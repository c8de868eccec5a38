//! GARP test for a growing history, one candidate observation at a time.

use super::bits::{intersects, iter_ones, BitMatrix};
use super::{strict_edge, weak_edge, RevPrefError};
use crate::panel::{AgentSeries, Observation};

/// Closure and strict relation of a GARP-consistent prefix (efficiency 1).
///
/// [`IncrementalGarp::try_push`] tests a candidate in `O(T^2 / 64)` word
/// operations plus `O(T K)` arithmetic and only mutates the state when the
/// extended history still satisfies GARP.
#[derive(Debug, Clone, Default)]
pub struct IncrementalGarp {
    observations: Vec<Observation>,
    spent: Vec<f64>,
    closure: BitMatrix,
    strict: BitMatrix,
}

fn set_bit(words: &mut [u64], i: usize) {
    words[i / 64] |= 1 << (i % 64);
}

impl IncrementalGarp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(periods: usize) -> Self {
        Self {
            observations: Vec::with_capacity(periods),
            spent: Vec::with_capacity(periods),
            closure: BitMatrix::with_capacity(0, periods),
            strict: BitMatrix::with_capacity(0, periods),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Transitive closure of the accepted prefix.
    pub fn closure(&self) -> &BitMatrix {
        &self.closure
    }

    pub fn into_series(self, agent_id: impl Into<String>, budget: f64) -> AgentSeries {
        AgentSeries::new(agent_id, self.observations, budget)
    }

    /// Accepts `obs` iff the prefix extended by it satisfies GARP.
    pub fn try_push(&mut self, obs: &Observation) -> Result<bool, RevPrefError> {
        let k = obs.prices.len();
        let expected = self.observations.first().map_or(k, Observation::goods);
        if k != expected || obs.quantities.len() != k {
            return Err(RevPrefError::Goods {
                expected,
                found: if k != expected {
                    k
                } else {
                    obs.quantities.len()
                },
            });
        }

        let n = self.len();
        let words = (n + 1).div_ceil(64);
        let x_new = obs.expenditure();
        let self_loop = weak_edge(1.0, x_new, x_new);

        // edges between the candidate and every accepted observation
        let mut to_new = vec![0u64; words]; // t -> new, weak
        let mut to_new_strict = vec![0u64; words];
        let mut from_new = vec![0u64; words]; // new -> t, weak
        let mut from_new_strict = vec![0u64; words];
        for (t, old) in self.observations.iter().enumerate() {
            let cost_at_new = obs.cost_of(&old.quantities);
            if weak_edge(1.0, x_new, cost_at_new) {
                set_bit(&mut from_new, t);
            }
            if strict_edge(1.0, x_new, cost_at_new) {
                set_bit(&mut from_new_strict, t);
            }
            let cost_at_old = old.cost_of(&obs.quantities);
            if weak_edge(1.0, self.spent[t], cost_at_old) {
                set_bit(&mut to_new, t);
            }
            if strict_edge(1.0, self.spent[t], cost_at_old) {
                set_bit(&mut to_new_strict, t);
            }
        }

        // old nodes that reach the candidate
        let mut ancestors = to_new.clone();
        for i in 0..n {
            if intersects(self.closure.row(i), &to_new) {
                set_bit(&mut ancestors, i);
            }
        }
        // old nodes reachable from the candidate
        let mut reach = from_new.clone();
        for t in iter_ones(&from_new) {
            for (r, c) in reach.iter_mut().zip(self.closure.row(t)) {
                *r |= c;
            }
        }

        // Only pairs whose closure entry is new can violate GARP.
        let violates = intersects(&reach, &to_new_strict)
            || intersects(&ancestors, &from_new_strict)
            || iter_ones(&reach).any(|t| intersects(self.strict.row(t), &ancestors));
        if violates {
            return Ok(false);
        }

        let new = self.closure.push_node();
        self.strict.push_node();
        debug_assert_eq!(new, n);
        let reaches_itself = self_loop || intersects(&reach, &ancestors);
        {
            let row = self.closure.row_mut(new);
            for (r, w) in row.iter_mut().zip(&reach) {
                *r |= w;
            }
            if reaches_itself {
                set_bit(row, new);
            }
        }
        for i in iter_ones(&ancestors) {
            let row = self.closure.row_mut(i);
            for (r, w) in row.iter_mut().zip(&reach) {
                *r |= w;
            }
            set_bit(row, new);
        }
        {
            let row = self.strict.row_mut(new);
            for (r, w) in row.iter_mut().zip(&from_new_strict) {
                *r |= w;
            }
        }
        for t in iter_ones(&to_new_strict) {
            self.strict.set(t, new);
        }
        self.observations.push(obs.clone());
        self.spent.push(x_new);
        Ok(true)
    }
}
