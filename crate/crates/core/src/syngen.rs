//! Synthetic GARP-consistent consumption panels.
//!
//! Every agent draws its own i.i.d. lognormal price path. For each period,
//! candidate bundles are drawn uniformly from the budget simplex (Dirichlet(1,...,1)
//! expenditure shares, `q_k = s_k m / p_k`) until one keeps the history GARP
//! consistent, or `max_iterations` candidates have been rejected.
//!
//! Randomness comes from ChaCha8 keyed by `(master_seed, domain)` with the agent
//! index as the stream id, so agent `i` gets the same draws no matter which
//! thread generates it or in which order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{AgentSeries, Observation, Panel, PanelMetadata};
use crate::revpref::IncrementalGarp;

pub const DGP_NAME: &str = "garp-dirichlet-lognormal";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    Generation = 1,
    RandomBaseline = 2,
}

/// Independent, reproducible RNG for one `(seed, domain, index)` triple.
pub fn stream_rng(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_agents: usize,
    pub periods: usize,
    pub goods: usize,
    pub budget: f64,
    /// `exp` of the log-price mean; prices are `price_median * exp(price_log_sd * Z)`.
    pub price_median: f64,
    pub price_log_sd: f64,
    /// Candidate draws allowed per period before the agent is reported exhausted.
    pub max_iterations: u64,
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_agents: 50_000,
            periods: 50,
            goods: 3,
            budget: 100.0,
            price_median: 3.0,
            price_log_sd: 0.5,
            max_iterations: 10_000,
            master_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn price_log_mean(&self) -> f64 {
        self.price_median.ln()
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: &str| Err(GenError::Config(msg.to_string()));
        if self.n_agents < 1 {
            return bad("n_agents must be at least 1");
        }
        if self.periods < 1 {
            return bad("periods must be at least 1");
        }
        if self.goods < 2 {
            return bad("goods must be at least 2");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return bad("budget must be positive and finite");
        }
        if !(self.price_median.is_finite() && self.price_median > 0.0) {
            return bad("price median must be positive and finite");
        }
        if !(self.price_log_sd.is_finite() && self.price_log_sd >= 0.0) {
            return bad("price log-sd must be non-negative and finite");
        }
        Ok(())
    }

    fn metadata(&self) -> PanelMetadata {
        let mut params = BTreeMap::new();
        let mut put = |k: &str, v: serde_json::Value| {
            params.insert(k.to_string(), v);
        };
        put("n_agents", self.n_agents.into());
        put("periods", self.periods.into());
        put("goods", self.goods.into());
        put("budget", self.budget.into());
        put("price_median", self.price_median.into());
        put("price_log_sd", self.price_log_sd.into());
        put("max_iterations", self.max_iterations.into());
        PanelMetadata {
            seed: Some(self.master_seed),
            params,
            ..PanelMetadata::new(DGP_NAME)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhaustion {
    pub agent_index: usize,
    /// 1-based period at which no candidate was accepted.
    pub period: usize,
    pub draws: u64,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("price {value} at position {index} is not strictly positive")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("agent {} exhausted {} draws at period {}", .0.agent_index, .0.draws, .0.period)]
    Exhausted(Exhaustion),
}

/// Expenditure shares on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareDraw {
    pub shares: Vec<f64>,
}

impl ShareDraw {
    /// Uniform on the simplex: normalized unit exponentials.
    pub fn sample<R: Rng + ?Sized>(goods: usize, rng: &mut R) -> Self {
        loop {
            let mut shares: Vec<f64> = (0..goods).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = shares.iter().sum();
            if total > 0.0 {
                shares.iter_mut().for_each(|s| *s /= total);
                return Self { shares };
            }
        }
    }
}

/// `T x K` matrix of i.i.d. lognormal prices.
pub fn draw_prices<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Vec<Vec<f64>> {
    (0..config.periods)
        .map(|_| {
            (0..config.goods)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    config.price_median * (config.price_log_sd * z).exp()
                })
                .collect()
        })
        .collect()
}

fn check_prices(prices: &[f64]) -> Result<(), GenError> {
    match prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
        Some(index) => Err(GenError::NonPositivePrice {
            index,
            value: prices[index],
        }),
        None => Ok(()),
    }
}

/// The bundle that spends share `s_k` of `budget` on good `k`.
pub fn bundle_from_shares(
    prices: &[f64],
    shares: &[f64],
    budget: f64,
) -> Result<Observation, GenError> {
    check_prices(prices)?;
    let quantities = prices
        .iter()
        .zip(shares)
        .map(|(p, s)| s * budget / p)
        .collect();
    Ok(Observation::new(prices.to_vec(), quantities))
}

/// A budget-exhausting bundle drawn uniformly from the budget simplex.
pub fn draw_bundle<R: Rng + ?Sized>(
    prices: &[f64],
    budget: f64,
    rng: &mut R,
) -> Result<Observation, GenError> {
    check_prices(prices)?;
    let draw = ShareDraw::sample(prices.len(), rng);
    bundle_from_shares(prices, &draw.shares, budget)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAgent {
    pub series: AgentSeries,
    pub rejections: u64,
    pub rejections_per_period: Vec<u64>,
}

pub fn agent_id(index: usize) -> String {
    format!("agent_{index:06}")
}

/// Runs the rejection sampler for agent `agent_index`.
pub fn generate_agent(config: &GenConfig, agent_index: usize) -> Result<GeneratedAgent, GenError> {
    config.validate()?;
    let mut rng = stream_rng(
        config.master_seed,
        StreamDomain::Generation,
        agent_index as u64,
    );
    let prices = draw_prices(config, &mut rng);
    let mut history = IncrementalGarp::with_capacity(config.periods);
    let mut per_period = Vec::with_capacity(config.periods);
    for (t, p) in prices.iter().enumerate() {
        let mut draws = 0;
        loop {
            if draws == config.max_iterations {
                return Err(GenError::Exhausted(Exhaustion {
                    agent_index,
                    period: t + 1,
                    draws,
                }));
            }
            draws += 1;
            let candidate = draw_bundle(p, config.budget, &mut rng)?;
            if history.try_push(&candidate).expect("goods fixed by config") {
                break;
            }
        }
        per_period.push(draws - 1);
    }
    Ok(GeneratedAgent {
        series: history.into_series(agent_id(agent_index), config.budget),
        rejections: per_period.iter().sum(),
        rejections_per_period: per_period,
    })
}

/// Rejection statistics of a generation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub agents_requested: usize,
    pub agents_generated: usize,
    pub agents_hit_m: usize,
    pub exhausted: Vec<Exhaustion>,
    pub total_rejections: u64,
    /// Total rejections at each period index, summed over generated agents.
    pub rejections_per_period: Vec<u64>,
    /// Counts of per-period rejection numbers in power-of-two buckets:
    /// bucket 0 holds 0 rejections, bucket `b` holds `[2^(b-1), 2^b)`.
    pub rejection_histogram: Vec<u64>,
    pub max_rejections_in_period: u64,
}

fn log2_bucket(r: u64) -> usize {
    (u64::BITS - r.leading_zeros()) as usize
}

impl GenReport {
    fn record(&mut self, agent: &GeneratedAgent) {
        self.agents_generated += 1;
        self.total_rejections += agent.rejections;
        if self.rejections_per_period.len() < agent.rejections_per_period.len() {
            self.rejections_per_period
                .resize(agent.rejections_per_period.len(), 0);
        }
        for (i, &r) in agent.rejections_per_period.iter().enumerate() {
            self.rejections_per_period[i] += r;
            let b = log2_bucket(r);
            if self.rejection_histogram.len() <= b {
                self.rejection_histogram.resize(b + 1, 0);
            }
            self.rejection_histogram[b] += 1;
            self.max_rejections_in_period = self.max_rejections_in_period.max(r);
        }
    }

    pub fn mean_rejections_per_agent(&self) -> f64 {
        if self.agents_generated == 0 {
            0.0
        } else {
            self.total_rejections as f64 / self.agents_generated as f64
        }
    }
}

/// Generates `n_agents` agents in parallel. Exhausted agents are left out of the
/// panel and listed in the report.
pub fn generate_panel(config: &GenConfig) -> Result<(Panel, GenReport), GenError> {
    config.validate()?;
    let results: Vec<Result<GeneratedAgent, GenError>> = (0..config.n_agents)
        .into_par_iter()
        .map(|i| generate_agent(config, i))
        .collect();
    let mut report = GenReport {
        agents_requested: config.n_agents,
        ..GenReport::default()
    };
    let mut agents = Vec::with_capacity(config.n_agents);
    for r in results {
        match r {
            Ok(agent) => {
                report.record(&agent);
                agents.push(agent.series);
            }
            Err(GenError::Exhausted(e)) => {
                report.agents_hit_m += 1;
                report.exhausted.push(e);
            }
            Err(other) => return Err(other),
        }
    }
    Ok((Panel::new(agents, config.metadata()), report))
}

/// The random feasible-budget benchmark: one independent uniform-simplex
/// bundle per horizon row.
pub fn random_budget_forecast<R: Rng + ?Sized>(
    prices_future: &[Vec<f64>],
    budget: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, GenError> {
    prices_future
        .iter()
        .map(|p| draw_bundle(p, budget, rng).map(|o| o.quantities))
        .collect()
}
