//! Point and quantile accuracy metrics for bundle forecasts.
//!
//! Matrices are `horizon x goods` slices of rows. Zero denominators are
//! reported as [`MetricError::ZeroScale`] / [`MetricError::ZeroActual`] so
//! callers can exclude and count them instead of propagating NaN.

use thiserror::Error;

use super::forecast::QuantileForecast;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("context of length {0} is too short (need at least 2)")]
    ContextTooShort(usize),
    #[error("empty horizon")]
    EmptyHorizon,
    #[error("constant context: naive in-sample MAE is zero")]
    ZeroScale,
    #[error("actual values are all zero over the horizon")]
    ZeroActual,
}

impl MetricError {
    /// `true` for zero-denominator cases, which are exclusions rather than failures.
    pub fn is_undefined(&self) -> bool {
        matches!(self, MetricError::ZeroScale | MetricError::ZeroActual)
    }
}

fn check_rows(actual: &[Vec<f64>], forecast: &[Vec<f64>]) -> Result<(), MetricError> {
    if actual.is_empty() {
        return Err(MetricError::EmptyHorizon);
    }
    if actual.len() != forecast.len() {
        return Err(MetricError::Shape(format!(
            "{} actual rows vs {} forecast rows",
            actual.len(),
            forecast.len()
        )));
    }
    for (t, (a, f)) in actual.iter().zip(forecast).enumerate() {
        if a.len() != f.len() {
            return Err(MetricError::Shape(format!(
                "row {t}: {} actual goods vs {} forecast goods",
                a.len(),
                f.len()
            )));
        }
    }
    Ok(())
}

/// Mean absolute scaled error of one good: forecast MAE over the in-context
/// one-step random-walk MAE.
pub fn mase(actual: &[f64], forecast: &[f64], context: &[f64]) -> Result<f64, MetricError> {
    if actual.is_empty() {
        return Err(MetricError::EmptyHorizon);
    }
    if actual.len() != forecast.len() {
        return Err(MetricError::Shape(format!(
            "{} actual vs {} forecast values",
            actual.len(),
            forecast.len()
        )));
    }
    if context.len() < 2 {
        return Err(MetricError::ContextTooShort(context.len()));
    }
    let scale =
        context.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (context.len() - 1) as f64;
    if scale == 0.0 {
        return Err(MetricError::ZeroScale);
    }
    let mae = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| (a - f).abs())
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mae / scale)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean per-period Euclidean distance between forecast and actual bundles.
pub fn bundle_l2(actual: &[Vec<f64>], forecast: &[Vec<f64>]) -> Result<f64, MetricError> {
    check_rows(actual, forecast)?;
    Ok(actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| euclid(a, f))
        .sum::<f64>()
        / actual.len() as f64)
}

/// Mean actual bundle norm over the horizon.
pub fn mean_actual_norm(actual: &[Vec<f64>]) -> f64 {
    actual.iter().map(|a| norm(a)).sum::<f64>() / actual.len().max(1) as f64
}

/// Bundle l2 divided by the mean actual bundle norm.
pub fn normalized_l2(actual: &[Vec<f64>], forecast: &[Vec<f64>]) -> Result<f64, MetricError> {
    let miss = bundle_l2(actual, forecast)?;
    let scale = mean_actual_norm(actual);
    if scale == 0.0 {
        return Err(MetricError::ZeroActual);
    }
    Ok(miss / scale)
}

/// `1 - normalized_l2`; equals 1 for a perfect forecast and can be negative.
pub fn bundle_fitness(actual: &[Vec<f64>], forecast: &[Vec<f64>]) -> Result<f64, MetricError> {
    normalized_l2(actual, forecast).map(|n| 1.0 - n)
}

/// Pinball loss `u (tau - 1{u < 0})` of residual `u = actual - forecast`.
pub fn pinball(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Weighted quantile loss over the first `actual.len()` steps:
/// `2 * sum pinball / (sum |actual| * n_levels)`.
pub fn weighted_quantile_loss(
    actual: &[Vec<f64>],
    forecast: &QuantileForecast,
) -> Result<f64, MetricError> {
    if actual.is_empty() {
        return Err(MetricError::EmptyHorizon);
    }
    if forecast.horizon() < actual.len() {
        return Err(MetricError::Shape(format!(
            "forecast horizon {} shorter than {} actual steps",
            forecast.horizon(),
            actual.len()
        )));
    }
    if actual.iter().any(|r| r.len() != forecast.goods()) {
        return Err(MetricError::Shape(format!(
            "forecast has {} goods",
            forecast.goods()
        )));
    }
    wql_with(actual, forecast.levels(), |t, k| forecast.quantiles(t, k))
}

fn wql_with<'a>(
    actual: &[Vec<f64>],
    levels: &[f64],
    quantiles: impl Fn(usize, usize) -> &'a [f64],
) -> Result<f64, MetricError> {
    let mut loss = 0.0;
    let mut scale = 0.0;
    for (t, row) in actual.iter().enumerate() {
        for (k, &q) in row.iter().enumerate() {
            scale += q.abs();
            loss += levels
                .iter()
                .zip(quantiles(t, k))
                .map(|(&tau, &f)| pinball(tau, q - f))
                .sum::<f64>();
        }
    }
    if scale == 0.0 {
        return Err(MetricError::ZeroActual);
    }
    Ok(2.0 * loss / (scale * levels.len() as f64))
}

/// Repeats the last context row `horizon` times.
pub fn naive_forecast(context: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>, MetricError> {
    let last = context.last().ok_or(MetricError::ContextTooShort(0))?;
    Ok(vec![last.clone(); horizon])
}

/// Column `k` of a row matrix.
pub(crate) fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}
