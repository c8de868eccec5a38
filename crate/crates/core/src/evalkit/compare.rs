//! Two-model comparisons: fitness survival, histograms, paired deltas and the
//! CCEI against fitness scatter.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{agent_set_diff, csv_err, opt, EvalError, MetricReport};
use crate::panel::{format_f64, Panel};
use crate::revpref::compute_ccei;

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

/// Fitness thresholds `0, 0.05, ..., 1`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessHistogram {
    /// `edges.len() == counts_a.len() + 1`.
    pub edges: Vec<f64>,
    pub counts_a: Vec<usize>,
    pub counts_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub agent_id: String,
    pub fitness_a: f64,
    pub fitness_b: f64,
    /// `fitness_b - fitness_a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTables {
    pub model_a: String,
    pub model_b: String,
    pub thresholds: Vec<f64>,
    /// Share of agents with fitness at or above each threshold.
    pub survival_a: Vec<f64>,
    pub survival_b: Vec<f64>,
    pub count_a: Vec<usize>,
    pub count_b: Vec<usize>,
    pub histogram: FitnessHistogram,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Agents where either fitness is undefined.
    pub excluded: usize,
    pub paired: Vec<PairedDelta>,
}

fn bin_index(x: f64, lo: f64, bins: usize) -> usize {
    let i = ((x - lo) / HISTOGRAM_BIN_WIDTH).floor();
    if i < 0.0 {
        0
    } else {
        (i as usize).min(bins - 1)
    }
}

fn histogram(a: &[f64], b: &[f64]) -> FitnessHistogram {
    let min = a.iter().chain(b).copied().fold(0.0_f64, f64::min);
    let lo_bins = (min / HISTOGRAM_BIN_WIDTH).floor() as i64;
    let hi_bins = (1.0 / HISTOGRAM_BIN_WIDTH).round() as i64;
    let bins = (hi_bins - lo_bins) as usize;
    let edges: Vec<f64> = (lo_bins..=hi_bins)
        .map(|i| i as f64 * HISTOGRAM_BIN_WIDTH)
        .collect();
    let lo = edges[0];
    let count = |xs: &[f64]| {
        let mut c = vec![0; bins];
        for &x in xs {
            c[bin_index(x, lo, bins)] += 1;
        }
        c
    };
    FitnessHistogram {
        counts_a: count(a),
        counts_b: count(b),
        edges,
    }
}

/// Compares the fitness of two reports over the same agents and horizon.
pub fn comparison_report(
    a: &MetricReport,
    b: &MetricReport,
    thresholds: &[f64],
) -> Result<ComparisonTables, EvalError> {
    if a.horizon != b.horizon {
        return Err(EvalError::HorizonMismatch(a.horizon, b.horizon));
    }
    if let Some((only_in_a, only_in_b)) = agent_set_diff(
        a.per_agent.iter().map(|r| r.agent_id.as_str()),
        b.per_agent.iter().map(|r| r.agent_id.as_str()),
    ) {
        return Err(EvalError::AgentMismatch {
            only_in_a,
            only_in_b,
        });
    }
    let fit_b: HashMap<&str, Option<f64>> = b
        .per_agent
        .iter()
        .map(|r| (r.agent_id.as_str(), r.fitness))
        .collect();

    let mut paired = Vec::new();
    let mut excluded = 0;
    for r in &a.per_agent {
        match (r.fitness, fit_b[r.agent_id.as_str()]) {
            (Some(fa), Some(fb)) => paired.push(PairedDelta {
                agent_id: r.agent_id.clone(),
                fitness_a: fa,
                fitness_b: fb,
                delta: fb - fa,
            }),
            _ => excluded += 1,
        }
    }
    let fa: Vec<f64> = paired.iter().map(|p| p.fitness_a).collect();
    let fb: Vec<f64> = paired.iter().map(|p| p.fitness_b).collect();
    let n = paired.len();
    let counts = |xs: &[f64]| -> Vec<usize> {
        thresholds
            .iter()
            .map(|&c| xs.iter().filter(|&&x| x >= c).count())
            .collect()
    };
    let share = |c: &[usize]| -> Vec<f64> {
        c.iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect()
    };
    let count_a = counts(&fa);
    let count_b = counts(&fb);
    Ok(ComparisonTables {
        model_a: a.model_name.clone(),
        model_b: b.model_name.clone(),
        thresholds: thresholds.to_vec(),
        survival_a: share(&count_a),
        survival_b: share(&count_b),
        count_a,
        count_b,
        histogram: histogram(&fa, &fb),
        wins: paired.iter().filter(|p| p.delta > 0.0).count(),
        losses: paired.iter().filter(|p| p.delta < 0.0).count(),
        ties: paired.iter().filter(|p| p.delta == 0.0).count(),
        excluded,
        paired,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub agent_id: String,
    pub ccei: f64,
    pub fitness: f64,
    pub exact_passer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CceiScatter {
    pub points: Vec<ScatterPoint>,
    pub correlation: Option<f64>,
    pub passer_mean_fitness: Option<f64>,
    pub non_passer_mean_fitness: Option<f64>,
    /// Agents with undefined fitness.
    pub excluded: usize,
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// CCEI of each agent's full series against its forecast fitness.
pub fn ccei_fitness_scatter(
    panel: &Panel,
    report: &MetricReport,
    tolerance: f64,
) -> Result<CceiScatter, EvalError> {
    let mut rows = Vec::new();
    let mut excluded = 0;
    for r in &report.per_agent {
        let series = panel
            .agent(&r.agent_id)
            .ok_or_else(|| EvalError::UnknownAgent(r.agent_id.clone()))?;
        match r.fitness {
            Some(f) => rows.push((series, f)),
            None => excluded += 1,
        }
    }
    let points = rows
        .par_iter()
        .map(|(series, fitness)| {
            let c = compute_ccei(series, tolerance).map_err(|source| EvalError::RevPref {
                agent_id: series.agent_id.clone(),
                source,
            })?;
            Ok(ScatterPoint {
                agent_id: series.agent_id.clone(),
                ccei: c.ccei,
                fitness: *fitness,
                exact_passer: c.iterations == 0,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.ccei).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.fitness).collect();
    let group = |passer: bool| {
        let v: Vec<f64> = points
            .iter()
            .filter(|p| p.exact_passer == passer)
            .map(|p| p.fitness)
            .collect();
        super::mean(&v)
    };
    Ok(CceiScatter {
        correlation: pearson(&xs, &ys),
        passer_mean_fitness: group(true),
        non_passer_mean_fitness: group(false),
        excluded,
        points,
    })
}

pub fn write_survival_csv<W: Write>(t: &ComparisonTables, writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "share_a", "share_b", "count_a", "count_b"])
        .map_err(csv_err)?;
    for i in 0..t.thresholds.len() {
        w.write_record([
            format_f64(t.thresholds[i]),
            format_f64(t.survival_a[i]),
            format_f64(t.survival_b[i]),
            t.count_a[i].to_string(),
            t.count_b[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_histogram_csv<W: Write>(t: &ComparisonTables, writer: W) -> Result<(), EvalError> {
    let h = &t.histogram;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "count_a", "count_b"])
        .map_err(csv_err)?;
    for i in 0..h.counts_a.len() {
        w.write_record([
            format_f64(h.edges[i]),
            format_f64(h.edges[i + 1]),
            h.counts_a[i].to_string(),
            h.counts_b[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_paired_csv<W: Write>(t: &ComparisonTables, writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["agent_id", "fitness_a", "fitness_b", "delta"])
        .map_err(csv_err)?;
    for p in &t.paired {
        w.write_record([
            p.agent_id.clone(),
            format_f64(p.fitness_a),
            format_f64(p.fitness_b),
            format_f64(p.delta),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_scatter_csv<W: Write>(s: &CceiScatter, writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["agent_id", "ccei", "fitness", "exact_passer"])
        .map_err(csv_err)?;
    for p in &s.points {
        w.write_record([
            p.agent_id.clone(),
            format_f64(p.ccei),
            format_f64(p.fitness),
            p.exact_passer.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.write_record(["correlation", &opt(s.correlation), "", ""])
        .map_err(csv_err)?;
    w.flush().map_err(csv_err)
}
