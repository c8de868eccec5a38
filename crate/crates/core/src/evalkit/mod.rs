//! Forecast evaluation against a held-out panel.

mod compare;
mod forecast;
mod metrics;

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{format_f64, Panel, PanelError, SplitSpec};
use crate::revpref::RevPrefError;

pub use compare::{
    ccei_fitness_scatter, comparison_report, default_thresholds, pearson, write_histogram_csv,
    write_paired_csv, write_scatter_csv, write_survival_csv, CceiScatter, ComparisonTables,
    FitnessHistogram, PairedDelta, ScatterPoint, HISTOGRAM_BIN_WIDTH,
};
pub use forecast::{
    read_forecasts, read_forecasts_csv, write_forecasts, write_forecasts_csv, ForecastError,
    ForecastSet, QuantileForecast, MEDIAN_LEVEL,
};
pub use metrics::{
    bundle_fitness, bundle_l2, mase, mean_actual_norm, naive_forecast, normalized_l2, pinball,
    weighted_quantile_loss, MetricError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no forecast for {} agent(s): {}", .0.len(), .0.join(", "))]
    MissingForecasts(Vec<String>),
    #[error("agent sets differ: {} only in first, {} only in second", only_in_a.len(), only_in_b.len())]
    AgentMismatch {
        only_in_a: Vec<String>,
        only_in_b: Vec<String>,
    },
    #[error("reports cover different horizons ({0} vs {1})")]
    HorizonMismatch(usize, usize),
    #[error("agent {agent_id}: {message}")]
    Shape { agent_id: String, message: String },
    #[error("agent {agent_id}: forecast covers {covered} steps, horizon is {horizon}")]
    ShortForecast {
        agent_id: String,
        covered: usize,
        horizon: usize,
    },
    #[error("agent {agent_id}: {source}")]
    Metric {
        agent_id: String,
        #[source]
        source: MetricError,
    },
    #[error("agent {0} is not in the panel")]
    UnknownAgent(String),
    #[error("agent {agent_id}: {source}")]
    RevPref {
        agent_id: String,
        #[source]
        source: RevPrefError,
    },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("csv output: {0}")]
    Output(String),
}

/// Metrics of one agent. `None` marks an undefined (zero-denominator) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent_id: String,
    pub mase: Vec<Option<f64>>,
    pub bundle_l2: f64,
    pub normalized_l2: Option<f64>,
    pub fitness: Option<f64>,
    pub wql: Option<f64>,
    /// Mean Euclidean norm of the actual bundles over the horizon.
    pub actual_norm: f64,
}

/// Mean and median over the defined values of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => excluded += 1,
            }
        }
        Self {
            mean: mean(&defined),
            median: median(&mut defined),
            count: defined.len(),
            excluded,
        }
    }
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mase: Vec<Summary>,
    pub bundle_l2: Summary,
    pub normalized_l2: Summary,
    pub fitness: Summary,
    pub wql: Summary,
    /// `1 - sum(L2) / sum(actual norm)` over agents with defined fitness.
    pub pooled_fitness: Option<f64>,
}

impl Aggregate {
    pub fn from_rows(rows: &[AgentMetrics], goods: usize) -> Self {
        let defined: Vec<&AgentMetrics> = rows.iter().filter(|r| r.fitness.is_some()).collect();
        let miss: f64 = defined.iter().map(|r| r.bundle_l2).sum();
        let scale: f64 = defined.iter().map(|r| r.actual_norm).sum();
        Self {
            mase: (0..goods)
                .map(|k| Summary::of(rows.iter().map(|r| r.mase[k])))
                .collect(),
            bundle_l2: Summary::of(rows.iter().map(|r| Some(r.bundle_l2))),
            normalized_l2: Summary::of(rows.iter().map(|r| r.normalized_l2)),
            fitness: Summary::of(rows.iter().map(|r| r.fitness)),
            wql: Summary::of(rows.iter().map(|r| r.wql)),
            pooled_fitness: (scale > 0.0).then(|| 1.0 - miss / scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_name: String,
    pub context: usize,
    pub horizon: usize,
    pub goods: usize,
    pub per_agent: Vec<AgentMetrics>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentMetrics> {
        self.per_agent.iter().find(|r| r.agent_id == agent_id)
    }
}

fn metric_or_undefined(
    agent_id: &str,
    r: Result<f64, MetricError>,
) -> Result<Option<f64>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_undefined() => Ok(None),
        Err(source) => Err(EvalError::Metric {
            agent_id: agent_id.to_string(),
            source,
        }),
    }
}

/// Metrics for one agent from its context, hold-out and forecast.
pub fn agent_metrics(
    agent_id: &str,
    context: &[Vec<f64>],
    actual: &[Vec<f64>],
    forecast: &QuantileForecast,
) -> Result<AgentMetrics, EvalError> {
    let h = actual.len();
    let goods = actual.first().map_or(0, Vec::len);
    if forecast.goods() != goods {
        return Err(EvalError::Shape {
            agent_id: agent_id.to_string(),
            message: format!("forecast has {} goods, panel has {goods}", forecast.goods()),
        });
    }
    if forecast.horizon() < h {
        return Err(EvalError::ShortForecast {
            agent_id: agent_id.to_string(),
            covered: forecast.horizon(),
            horizon: h,
        });
    }
    let point = forecast.point_rows(h);
    let err = |source| EvalError::Metric {
        agent_id: agent_id.to_string(),
        source,
    };
    let mase = (0..goods)
        .map(|k| {
            let r = metrics::mase(
                &metrics::column(actual, k),
                &metrics::column(&point, k),
                &metrics::column(context, k),
            );
            metric_or_undefined(agent_id, r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let l2 = bundle_l2(actual, &point).map_err(err)?;
    let nl2 = metric_or_undefined(agent_id, normalized_l2(actual, &point))?;
    Ok(AgentMetrics {
        agent_id: agent_id.to_string(),
        mase,
        bundle_l2: l2,
        normalized_l2: nl2,
        fitness: nl2.map(|n| 1.0 - n),
        wql: metric_or_undefined(agent_id, weighted_quantile_loss(actual, forecast))?,
        actual_norm: mean_actual_norm(actual),
    })
}

fn quantity_rows(obs: &[crate::panel::Observation]) -> Vec<Vec<f64>> {
    obs.iter().map(|o| o.quantities.clone()).collect()
}

/// Evaluates `forecasts` on every agent of `panel`, using the first
/// `split.context` periods as context and the next `split.horizon` as hold-out.
///
/// Forecasts longer than the horizon are truncated; forecasts for agents not
/// in the panel are ignored.
pub fn evaluate(
    panel: &Panel,
    forecasts: &[QuantileForecast],
    split: &SplitSpec,
    model_name: &str,
) -> Result<MetricReport, EvalError> {
    let by_agent: HashMap<&str, &QuantileForecast> =
        forecasts.iter().map(|f| (f.agent_id(), f)).collect();
    let missing: Vec<String> = panel
        .agents
        .iter()
        .filter(|a| !by_agent.contains_key(a.agent_id.as_str()))
        .map(|a| a.agent_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingForecasts(missing));
    }
    let per_agent = panel
        .agents
        .par_iter()
        .map(|agent| {
            let (context, holdout) = agent.split(split)?;
            agent_metrics(
                &agent.agent_id,
                &quantity_rows(context),
                &quantity_rows(holdout),
                by_agent[agent.agent_id.as_str()],
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let goods = panel.goods();
    Ok(MetricReport {
        model_name: model_name.to_string(),
        context: split.context,
        horizon: split.horizon,
        goods,
        aggregate: Aggregate::from_rows(&per_agent, goods),
        per_agent,
    })
}

/// Naive (last value) forecasts for every agent of the panel.
pub fn naive_forecasts(
    panel: &Panel,
    split: &SplitSpec,
) -> Result<Vec<QuantileForecast>, EvalError> {
    panel
        .agents
        .iter()
        .map(|a| {
            let (context, _) = a.split(split)?;
            let rows =
                naive_forecast(&quantity_rows(context), split.horizon).map_err(|source| {
                    EvalError::Metric {
                        agent_id: a.agent_id.clone(),
                        source,
                    }
                })?;
            Ok(QuantileForecast::from_point(a.agent_id.clone(), &rows)?)
        })
        .collect()
}

pub(crate) fn agent_set_diff<'a>(
    a: impl IntoIterator<Item = &'a str>,
    b: impl IntoIterator<Item = &'a str>,
) -> Option<(Vec<String>, Vec<String>)> {
    let a: Vec<&str> = a.into_iter().collect();
    let b: Vec<&str> = b.into_iter().collect();
    let sa: HashSet<&str> = a.iter().copied().collect();
    let sb: HashSet<&str> = b.iter().copied().collect();
    let only_a: Vec<String> = a
        .iter()
        .filter(|x| !sb.contains(*x))
        .map(|s| s.to_string())
        .collect();
    let only_b: Vec<String> = b
        .iter()
        .filter(|x| !sa.contains(*x))
        .map(|s| s.to_string())
        .collect();
    (!only_a.is_empty() || !only_b.is_empty()).then_some((only_a, only_b))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Output(e.to_string())
}

/// One row per agent; undefined metrics are empty cells.
pub fn write_agent_metrics_csv<W: Write>(
    report: &MetricReport,
    writer: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["agent_id".to_string()];
    header.extend((1..=report.goods).map(|k| format!("mase_{k}")));
    header.extend(["bundle_l2", "normalized_l2", "fitness", "wql"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in &report.per_agent {
        let mut row = vec![r.agent_id.clone()];
        row.extend(r.mase.iter().map(|m| opt(*m)));
        row.push(format_f64(r.bundle_l2));
        row.push(opt(r.normalized_l2));
        row.push(opt(r.fitness));
        row.push(opt(r.wql));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Summary table, one row per model: mean MASE by good, mean bundle l2 and
/// mean fitness, followed by medians, the pooled fitness and exclusion counts.
pub fn write_summary_csv<W: Write>(reports: &[MetricReport], writer: W) -> Result<(), EvalError> {
    let goods = reports.first().map_or(0, |r| r.goods);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string(), "horizon".to_string()];
    header.extend((1..=goods).map(|k| format!("mase_{k}")));
    header.extend(
        [
            "bundle_l2",
            "bundle_fitness",
            "bundle_l2_median",
            "fitness_median",
            "pooled_fitness",
            "wql",
            "agents",
            "mase_excluded",
            "fitness_excluded",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let a = &r.aggregate;
        let mut row = vec![r.model_name.clone(), r.horizon.to_string()];
        row.extend(a.mase.iter().map(|s| opt(s.mean)));
        row.push(opt(a.bundle_l2.mean));
        row.push(opt(a.fitness.mean));
        row.push(opt(a.bundle_l2.median));
        row.push(opt(a.fitness.median));
        row.push(opt(a.pooled_fitness));
        row.push(opt(a.wql.mean));
        row.push(r.per_agent.len().to_string());
        row.push(a.mase.iter().map(|s| s.excluded).sum::<usize>().to_string());
        row.push(a.fitness.excluded.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{AgentSeries, Observation, PanelMetadata};

    fn panel() -> Panel {
        let mk = |id: &str, f: &dyn Fn(usize) -> Vec<f64>| {
            let obs = (0..6)
                .map(|t| Observation::new(vec![1.0, 1.0, 1.0], f(t)))
                .collect();
            AgentSeries::new(id, obs, 100.0)
        };
        Panel::new(
            vec![
                mk("a", &|t| {
                    vec![t as f64, 10.0 - t as f64, 5.0 + (t % 2) as f64]
                }),
                mk("b", &|_| vec![3.0, 3.0, 3.0]),
            ],
            PanelMetadata::default(),
        )
    }

    #[test]
    fn perfect_forecasts() {
        let p = panel();
        let split = SplitSpec::new(4, 2).unwrap();
        let fc: Vec<QuantileForecast> = p
            .agents
            .iter()
            .map(|a| {
                let (_, hold) = a.split(&split).unwrap();
                QuantileForecast::from_point(a.agent_id.clone(), &quantity_rows(hold)).unwrap()
            })
            .collect();
        let r = evaluate(&p, &fc, &split, "oracle").unwrap();
        let a = r.agent("a").unwrap();
        assert_eq!(a.mase, vec![Some(0.0); 3]);
        assert_eq!((a.bundle_l2, a.fitness, a.wql), (0.0, Some(1.0), Some(0.0)));
        // constant context: MASE undefined for every good of b
        let b = r.agent("b").unwrap();
        assert_eq!(b.mase, vec![None; 3]);
        assert_eq!(r.aggregate.mase[0].excluded, 1);
        assert_eq!(r.aggregate.fitness.mean, Some(1.0));
    }

    #[test]
    fn naive_on_constant_series_is_perfect() {
        let p = panel();
        let split = SplitSpec::new(3, 3).unwrap();
        let fc = naive_forecasts(&p, &split).unwrap();
        let r = evaluate(&p, &fc, &split, "naive").unwrap();
        assert_eq!(r.agent("b").unwrap().fitness, Some(1.0));
    }

    #[test]
    fn missing_forecast_listed() {
        let p = panel();
        let split = SplitSpec::new(3, 3).unwrap();
        let mut fc = naive_forecasts(&p, &split).unwrap();
        fc.remove(0);
        match evaluate(&p, &fc, &split, "x") {
            Err(EvalError::MissingForecasts(ids)) => assert_eq!(ids, vec!["a".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_forecast_rejected() {
        let p = panel();
        let fc = naive_forecasts(&p, &SplitSpec::new(3, 1).unwrap()).unwrap();
        assert!(matches!(
            evaluate(&p, &fc, &SplitSpec::new(3, 2).unwrap(), "x"),
            Err(EvalError::ShortForecast {
                covered: 1,
                horizon: 2,
                ..
            })
        ));
    }

    #[test]
    fn summary_medians() {
        let s = Summary::of([Some(3.0), None, Some(1.0), Some(2.0), Some(10.0)]);
        assert_eq!(
            (s.mean, s.median, s.count, s.excluded),
            (Some(4.0), Some(2.5), 4, 1)
        );
        assert_eq!(Summary::of([None]).mean, None);
    }

    #[test]
    fn csv_tables_have_one_row_per_entry() {
        let p = panel();
        let split = SplitSpec::new(3, 3).unwrap();
        let r = evaluate(&p, &naive_forecasts(&p, &split).unwrap(), &split, "naive").unwrap();
        let mut buf = Vec::new();
        write_agent_metrics_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("agent_id,mase_1,mase_2,mase_3,bundle_l2"));
        let mut buf = Vec::new();
        write_summary_csv(&[r.clone(), r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
