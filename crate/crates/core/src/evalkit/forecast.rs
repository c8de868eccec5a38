//! Quantile forecasts and the long-format forecast file
//! (`agent_id, t, good, level, value`, with `t` and `good` 1-based).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::panel::format_f64;

pub const MEDIAN_LEVEL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("forecast file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("agent {agent_id}: {message}")]
    Levels { agent_id: String, message: String },
    #[error("agent {agent_id}: quantile level 0.5 is required for point forecasts")]
    MissingMedian { agent_id: String },
    #[error("agent {agent_id}: {message}")]
    Shape { agent_id: String, message: String },
}

/// Forecast quantiles for one agent, `horizon x goods x levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    agent_id: String,
    horizon: usize,
    goods: usize,
    levels: Vec<f64>,
    values: Vec<f64>,
    median: usize,
}

impl QuantileForecast {
    /// Builds a forecast from `values` laid out as `[t][k][level]`.
    ///
    /// Quantiles that decrease across levels are sorted per `(t, k)`; the
    /// second return value counts the cells that needed it.
    pub fn new(
        agent_id: impl Into<String>,
        horizon: usize,
        goods: usize,
        levels: Vec<f64>,
        mut values: Vec<f64>,
    ) -> Result<(Self, usize), ForecastError> {
        let agent_id = agent_id.into();
        let levels_err = |message: String| ForecastError::Levels {
            agent_id: agent_id.clone(),
            message,
        };
        if levels.is_empty() {
            return Err(levels_err("no quantile levels".into()));
        }
        if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(levels_err(format!("level {l} outside (0, 1)")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(levels_err("levels must be strictly ascending".into()));
        }
        let Some(median) = levels.iter().position(|&l| l == MEDIAN_LEVEL) else {
            return Err(ForecastError::MissingMedian { agent_id });
        };
        if horizon == 0 || goods == 0 || values.len() != horizon * goods * levels.len() {
            return Err(ForecastError::Shape {
                message: format!(
                    "{} values for horizon {horizon}, {goods} goods, {} levels",
                    values.len(),
                    levels.len()
                ),
                agent_id,
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ForecastError::Shape {
                message: format!("non-finite forecast value {v}"),
                agent_id,
            });
        }
        let mut rearranged = 0;
        for cell in values.chunks_mut(levels.len()) {
            if cell.windows(2).any(|w| w[0] > w[1]) {
                cell.sort_by(f64::total_cmp);
                rearranged += 1;
            }
        }
        Ok((
            Self {
                agent_id,
                horizon,
                goods,
                levels,
                values,
                median,
            },
            rearranged,
        ))
    }

    /// A point forecast stored as the single level 0.5.
    pub fn from_point(
        agent_id: impl Into<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self, ForecastError> {
        let goods = rows.first().map_or(0, Vec::len);
        let agent_id = agent_id.into();
        if rows.iter().any(|r| r.len() != goods) {
            return Err(ForecastError::Shape {
                agent_id,
                message: "ragged point forecast".into(),
            });
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(agent_id, rows.len(), goods, vec![MEDIAN_LEVEL], values).map(|(f, _)| f)
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn goods(&self) -> usize {
        self.goods
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Quantiles of good `k` at step `t` (both 0-based), ascending by level.
    pub fn quantiles(&self, t: usize, k: usize) -> &[f64] {
        let n = self.levels.len();
        let start = (t * self.goods + k) * n;
        &self.values[start..start + n]
    }

    pub fn median(&self, t: usize, k: usize) -> f64 {
        self.quantiles(t, k)[self.median]
    }

    /// Median forecasts for the first `horizon` steps as `horizon x goods` rows.
    pub fn point_rows(&self, horizon: usize) -> Vec<Vec<f64>> {
        (0..horizon.min(self.horizon))
            .map(|t| (0..self.goods).map(|k| self.median(t, k)).collect())
            .collect()
    }
}

/// All forecasts of one file plus the number of rearranged quantile cells.
#[derive(Debug, Clone, Default)]
pub struct ForecastSet {
    pub forecasts: Vec<QuantileForecast>,
    pub rearranged_cells: usize,
}

const COLUMNS: [&str; 5] = ["agent_id", "t", "good", "level", "value"];

pub fn write_forecasts_csv<W: Write>(
    forecasts: &[QuantileForecast],
    writer: W,
) -> Result<(), ForecastError> {
    let err = |e: csv::Error| ForecastError::Parse {
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS).map_err(err)?;
    for f in forecasts {
        for t in 0..f.horizon {
            for k in 0..f.goods {
                for (level, value) in f.levels.iter().zip(f.quantiles(t, k)) {
                    w.write_record([
                        f.agent_id.clone(),
                        (t + 1).to_string(),
                        (k + 1).to_string(),
                        level.to_string(),
                        format_f64(*value),
                    ])
                    .map_err(err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| ForecastError::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_forecasts(forecasts: &[QuantileForecast], path: &Path) -> Result<(), ForecastError> {
    let file = File::create(path).map_err(|source| ForecastError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_forecasts_csv(forecasts, BufWriter::new(file))
}

#[derive(Default)]
struct Pending {
    cells: HashMap<(usize, usize, u64), f64>,
    levels: BTreeMap<u64, f64>,
    horizon: usize,
    goods: usize,
}

/// Reads a long-format forecast table. Agents keep their order of first
/// appearance; every `(t, good, level)` cell must be present exactly once.
pub fn read_forecasts_csv<R: Read>(reader: R) -> Result<ForecastSet, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ForecastError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ForecastError::MissingColumn(name.to_string()))?;
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ForecastError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |col: &str, e: &dyn std::fmt::Display| ForecastError::Parse {
            line,
            message: format!("column `{col}`: {e}"),
        };
        let agent = rec[idx[0]].to_string();
        let t: usize = rec[idx[1]].parse().map_err(|e| parse_err("t", &e))?;
        let good: usize = rec[idx[2]].parse().map_err(|e| parse_err("good", &e))?;
        let level: f64 = rec[idx[3]].parse().map_err(|e| parse_err("level", &e))?;
        let value: f64 = rec[idx[4]].parse().map_err(|e| parse_err("value", &e))?;
        if t == 0 || good == 0 {
            return Err(ForecastError::Parse {
                line,
                message: "t and good are 1-based".into(),
            });
        }
        let entry = pending.entry(agent.clone()).or_insert_with(|| {
            order.push(agent.clone());
            Pending::default()
        });
        // map ordered by value: non-negative levels sort correctly by bit pattern
        let key = if level == 0.0 { 0 } else { level.to_bits() };
        entry.levels.insert(key, level);
        entry.horizon = entry.horizon.max(t);
        entry.goods = entry.goods.max(good);
        if entry.cells.insert((t - 1, good - 1, key), value).is_some() {
            return Err(ForecastError::Parse {
                line,
                message: format!(
                    "duplicate cell for agent {agent}, t {t}, good {good}, level {level}"
                ),
            });
        }
    }

    let mut set = ForecastSet::default();
    for agent in order {
        let p = pending.remove(&agent).expect("recorded in order");
        let keys: Vec<u64> = p.levels.keys().copied().collect();
        let expected = p.horizon * p.goods * keys.len();
        if p.cells.len() != expected {
            return Err(ForecastError::Shape {
                agent_id: agent,
                message: format!(
                    "{} cells present, {} expected for horizon {}, {} goods, {} levels",
                    p.cells.len(),
                    expected,
                    p.horizon,
                    p.goods,
                    keys.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(expected);
        for t in 0..p.horizon {
            for k in 0..p.goods {
                for key in &keys {
                    values.push(p.cells[&(t, k, *key)]);
                }
            }
        }
        let levels = p.levels.values().copied().collect();
        let (f, rearranged) = QuantileForecast::new(agent, p.horizon, p.goods, levels, values)?;
        set.rearranged_cells += rearranged;
        set.forecasts.push(f);
    }
    Ok(set)
}

pub fn read_forecasts(path: &Path) -> Result<ForecastSet, ForecastError> {
    let file = File::open(path).map_err(|source| ForecastError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_forecasts_csv(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_required() {
        let r = QuantileForecast::new("a", 1, 1, vec![0.1, 0.9], vec![1.0, 2.0]);
        assert!(matches!(r, Err(ForecastError::MissingMedian { .. })));
    }

    #[test]
    fn bad_levels() {
        assert!(QuantileForecast::new("a", 1, 1, vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
        assert!(QuantileForecast::new("a", 1, 1, vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(QuantileForecast::new("a", 1, 1, vec![0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn rearranges_crossing_quantiles() {
        let (f, n) = QuantileForecast::new(
            "a",
            2,
            1,
            vec![0.1, 0.5, 0.9],
            vec![3.0, 2.0, 1.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_eq!(n, 1);
        assert_eq!(f.quantiles(0, 0), &[1.0, 2.0, 3.0]);
        assert_eq!(f.median(1, 0), 2.0);
    }

    #[test]
    fn file_round_trip() {
        let (f, _) = QuantileForecast::new(
            "x,1",
            2,
            2,
            vec![0.1, 0.5, 0.9],
            (0..12).map(|v| v as f64 / 7.0).collect(),
        )
        .unwrap();
        let g = QuantileForecast::from_point("y", &[vec![1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_forecasts_csv(&[f.clone(), g.clone()], &mut buf).unwrap();
        let back = read_forecasts_csv(buf.as_slice()).unwrap();
        assert_eq!(back.forecasts, vec![f, g]);
        assert_eq!(back.rearranged_cells, 0);
    }

    #[test]
    fn incomplete_and_duplicate_cells() {
        let text = "agent_id,t,good,level,value\na,1,1,0.5,1\na,2,1,0.5,1\na,1,2,0.5,1\n";
        assert!(matches!(
            read_forecasts_csv(text.as_bytes()),
            Err(ForecastError::Shape { .. })
        ));
        let text = "agent_id,t,good,level,value\na,1,1,0.5,1\na,1,1,0.5,2\n";
        assert!(matches!(
            read_forecasts_csv(text.as_bytes()),
            Err(ForecastError::Parse { line: 3, .. })
        ));
        let text = "agent_id,t,good,value\n";
        assert!(matches!(
            read_forecasts_csv(text.as_bytes()),
            Err(ForecastError::MissingColumn(c)) if c == "level"
        ));
    }
}
