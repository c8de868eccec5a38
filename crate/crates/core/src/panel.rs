//! Panel data model, validation and the CSV + sidecar file format.
//!
//! A panel file is a CSV table with the columns
//! `agent_id, t, p_1..p_K, q_1..q_K, budget`, one row per observation, rows of
//! one agent contiguous and ordered by `t = 1..T`. Numbers are written with 17
//! significant digits so that `read(write(p))` reproduces every `f64` exactly.
//! Generation parameters live in a JSON sidecar next to the table
//! (`panel.csv` -> `panel.meta.json`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of the panel file schema written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Relative slack allowed when checking `p_t . q_t <= budget`.
pub const DEFAULT_BUDGET_TOLERANCE: f64 = 1e-9;

/// One period: posted prices and the chosen bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub prices: Vec<f64>,
    pub quantities: Vec<f64>,
}

impl Observation {
    pub fn new(prices: Vec<f64>, quantities: Vec<f64>) -> Self {
        Self { prices, quantities }
    }

    pub fn goods(&self) -> usize {
        self.prices.len()
    }

    /// Money spent on the chosen bundle, `p . q`.
    pub fn expenditure(&self) -> f64 {
        dot(&self.prices, &self.quantities)
    }

    /// Cost of an arbitrary bundle at this observation's prices.
    pub fn cost_of(&self, bundle: &[f64]) -> f64 {
        dot(&self.prices, bundle)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The price-quantity history of one agent facing a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSeries {
    pub agent_id: String,
    pub observations: Vec<Observation>,
    pub budget: f64,
}

impl AgentSeries {
    pub fn new(agent_id: impl Into<String>, observations: Vec<Observation>, budget: f64) -> Self {
        Self {
            agent_id: agent_id.into(),
            observations,
            budget,
        }
    }

    /// Number of periods `T`.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of goods `K`, taken from the first observation.
    pub fn goods(&self) -> usize {
        self.observations.first().map_or(0, Observation::goods)
    }

    pub fn expenditures(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(Observation::expenditure)
            .collect()
    }

    /// Splits the history into the context window and the following `horizon` periods.
    pub fn split(&self, split: &SplitSpec) -> Result<(&[Observation], &[Observation]), PanelError> {
        let needed = split.context + split.horizon;
        if needed > self.len() {
            return Err(PanelError::SplitTooLong {
                agent_id: self.agent_id.clone(),
                needed,
                available: self.len(),
            });
        }
        let (context, rest) = self.observations.split_at(split.context);
        Ok((context, &rest[..split.horizon]))
    }
}

/// Provenance recorded in the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub schema_version: u32,
    pub dgp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl PanelMetadata {
    pub fn new(dgp: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dgp: dgp.into(),
            seed: None,
            params: BTreeMap::new(),
        }
    }
}

impl Default for PanelMetadata {
    fn default() -> Self {
        Self::new("external")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub agents: Vec<AgentSeries>,
    pub metadata: PanelMetadata,
}

impl Panel {
    pub fn new(agents: Vec<AgentSeries>, metadata: PanelMetadata) -> Self {
        Self { agents, metadata }
    }

    /// Number of goods shared by the panel (0 for an empty panel).
    pub fn goods(&self) -> usize {
        self.agents.first().map_or(0, AgentSeries::goods)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentSeries> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }
}

/// Context length and forecast horizon used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub context: usize,
    pub horizon: usize,
}

impl SplitSpec {
    pub const DEFAULT_CONTEXT: usize = 35;
    pub const DEFAULT_HORIZONS: [usize; 4] = [1, 5, 10, 15];

    pub fn new(context: usize, horizon: usize) -> Result<Self, PanelError> {
        if context == 0 || horizon == 0 {
            return Err(PanelError::InvalidSplit { context, horizon });
        }
        Ok(Self { context, horizon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    AgentId,
    Observations,
    Prices,
    Quantities,
    Goods,
    Budget,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::AgentId => "agent_id",
            Field::Observations => "observations",
            Field::Prices => "prices",
            Field::Quantities => "quantities",
            Field::Goods => "goods",
            Field::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    PricesPositive,
    QuantitiesNonNegative,
    LengthMismatch,
    TooFewGoods,
    GoodsMismatch,
    EmptySeries,
    BudgetPositive,
    BudgetExceeded,
    DuplicateAgentId,
}

impl Rule {
    pub fn describe(&self) -> &'static str {
        match self {
            Rule::PricesPositive => "prices strictly positive and finite",
            Rule::QuantitiesNonNegative => "quantities non-negative and finite",
            Rule::LengthMismatch => "prices and quantities have equal length",
            Rule::TooFewGoods => "at least two goods",
            Rule::GoodsMismatch => "all observations share the panel's number of goods",
            Rule::EmptySeries => "at least one observation",
            Rule::BudgetPositive => "budget strictly positive and finite",
            Rule::BudgetExceeded => "budget exceeded",
            Rule::DuplicateAgentId => "agent ids unique",
        }
    }
}

/// A single broken invariant, located by agent and (1-based) period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub agent_id: String,
    pub agent_index: usize,
    pub period: Option<usize>,
    pub field: Field,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {}", self.agent_id)?;
        if let Some(t) = self.period {
            write!(f, ", period {t}")?;
        }
        write!(f, ", {}: {}", self.field, self.rule.describe())
    }
}

/// Checks every panel invariant and returns one descriptor per defect.
///
/// Per observation each rule fires at most once, so a row with two negative
/// prices yields a single `PricesPositive` violation.
pub fn validate_panel(panel: &Panel, budget_tolerance: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let panel_goods = panel
        .agents
        .iter()
        .flat_map(|a| a.observations.first())
        .map(Observation::goods)
        .next();
    let mut seen = HashSet::new();

    for (agent_index, agent) in panel.agents.iter().enumerate() {
        let mut push = |period: Option<usize>, field: Field, rule: Rule| {
            out.push(Violation {
                agent_id: agent.agent_id.clone(),
                agent_index,
                period,
                field,
                rule,
            })
        };

        if !seen.insert(agent.agent_id.as_str()) {
            push(None, Field::AgentId, Rule::DuplicateAgentId);
        }
        let budget_ok = agent.budget.is_finite() && agent.budget > 0.0;
        if !budget_ok {
            push(None, Field::Budget, Rule::BudgetPositive);
        }
        if agent.observations.is_empty() {
            push(None, Field::Observations, Rule::EmptySeries);
        }

        for (i, obs) in agent.observations.iter().enumerate() {
            let t = Some(i + 1);
            if obs.prices.len() != obs.quantities.len() {
                push(t, Field::Goods, Rule::LengthMismatch);
            } else if obs.prices.len() < 2 {
                push(t, Field::Goods, Rule::TooFewGoods);
            } else if Some(obs.prices.len()) != panel_goods {
                push(t, Field::Goods, Rule::GoodsMismatch);
            }
            if obs.prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                push(t, Field::Prices, Rule::PricesPositive);
            }
            if obs.quantities.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                push(t, Field::Quantities, Rule::QuantitiesNonNegative);
            }
            if budget_ok {
                let spent = obs.expenditure();
                if spent > agent.budget * (1.0 + budget_tolerance) {
                    push(t, Field::Budget, Rule::BudgetExceeded);
                }
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("unsupported panel schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("metadata sidecar {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("panel failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("agent {agent_id}: split needs {needed} periods but only {available} are available")]
    SplitTooLong {
        agent_id: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid split: context {context}, horizon {horizon} (both must be positive)")]
    InvalidSplit { context: usize, horizon: usize },
}

fn parse_err(line: u64, message: impl Into<String>) -> PanelError {
    PanelError::Parse {
        line,
        message: message.into(),
    }
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Path of the metadata sidecar belonging to a panel table.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn header(goods: usize) -> Vec<String> {
    let mut cols = vec!["agent_id".to_string(), "t".to_string()];
    cols.extend((1..=goods).map(|k| format!("p_{k}")));
    cols.extend((1..=goods).map(|k| format!("q_{k}")));
    cols.push("budget".to_string());
    cols
}

/// Writes the CSV table only. The panel is not validated here.
pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<(), PanelError> {
    let io = |e: csv::Error| parse_err(0, e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(panel.goods())).map_err(io)?;
    let mut row = Vec::new();
    for agent in &panel.agents {
        let budget = format_f64(agent.budget);
        for (i, obs) in agent.observations.iter().enumerate() {
            row.clear();
            row.push(agent.agent_id.clone());
            row.push((i + 1).to_string());
            row.extend(obs.prices.iter().copied().map(format_f64));
            row.extend(obs.quantities.iter().copied().map(format_f64));
            row.push(budget.clone());
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| parse_err(0, e.to_string()))?;
    Ok(())
}

struct Columns {
    agent: usize,
    t: usize,
    prices: Vec<usize>,
    quantities: Vec<usize>,
    budget: usize,
    width: usize,
}

fn resolve_columns(headers: &csv::StringRecord) -> Result<Columns, PanelError> {
    let find = |name: &str| -> Result<usize, PanelError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let goods = (1..)
        .take_while(|k| headers.iter().any(|h| h == format!("p_{k}")))
        .count();
    if goods == 0 {
        return Err(PanelError::MissingColumn("p_1".into()));
    }
    let cols = Columns {
        agent: find("agent_id")?,
        t: find("t")?,
        prices: (1..=goods)
            .map(|k| find(&format!("p_{k}")))
            .collect::<Result<_, _>>()?,
        quantities: (1..=goods)
            .map(|k| find(&format!("q_{k}")))
            .collect::<Result<_, _>>()?,
        budget: find("budget")?,
        width: headers.len(),
    };
    let expected = 2 * goods + 3;
    if headers.len() != expected {
        let known: HashSet<String> = header(goods).into_iter().collect();
        let extra = headers.iter().find(|h| !known.contains(*h)).unwrap_or("?");
        return Err(parse_err(1, format!("unexpected column `{extra}`")));
    }
    Ok(cols)
}

/// Reads a CSV table. Metadata is left at its default.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<Panel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols = resolve_columns(&headers)?;

    let mut agents: Vec<AgentSeries> = Vec::new();
    let mut finished = HashSet::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols.width {
            return Err(PanelError::Arity {
                line,
                expected: cols.width,
                found: record.len(),
            });
        }
        let num = |idx: usize| -> Result<f64, PanelError> {
            record[idx].parse::<f64>().map_err(|e| {
                parse_err(
                    line,
                    format!("column `{}`: {e} ({:?})", &headers[idx], &record[idx]),
                )
            })
        };
        let agent_id = &record[cols.agent];
        let t: usize = record[cols.t]
            .parse()
            .map_err(|e| parse_err(line, format!("column `t`: {e} ({:?})", &record[cols.t])))?;
        let prices = cols
            .prices
            .iter()
            .map(|&i| num(i))
            .collect::<Result<Vec<_>, _>>()?;
        let quantities = cols
            .quantities
            .iter()
            .map(|&i| num(i))
            .collect::<Result<Vec<_>, _>>()?;
        let budget = num(cols.budget)?;

        let continuing = agents.last().is_some_and(|a| a.agent_id == agent_id);
        if !continuing {
            if let Some(prev) = agents.last() {
                finished.insert(prev.agent_id.clone());
            }
            if finished.contains(agent_id) {
                return Err(parse_err(
                    line,
                    format!("rows of agent {agent_id} are not contiguous"),
                ));
            }
            agents.push(AgentSeries::new(agent_id, Vec::new(), budget));
        }
        let agent = agents.last_mut().expect("pushed above");
        if t != agent.len() + 1 {
            return Err(parse_err(
                line,
                format!(
                    "agent {agent_id}: expected t = {}, found {t}",
                    agent.len() + 1
                ),
            ));
        }
        if budget.to_bits() != agent.budget.to_bits() {
            return Err(parse_err(
                line,
                format!("agent {agent_id}: budget changes within the series"),
            ));
        }
        agent
            .observations
            .push(Observation::new(prices, quantities));
    }
    Ok(Panel::new(agents, PanelMetadata::default()))
}

/// Validates and writes the table plus its metadata sidecar.
pub fn write_panel(panel: &Panel, path: &Path) -> Result<(), PanelError> {
    let violations = validate_panel(panel, DEFAULT_BUDGET_TOLERANCE);
    if !violations.is_empty() {
        return Err(PanelError::Invalid(violations));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PanelError::Io { path, source }
    };
    let file = File::create(path).map_err(io(path))?;
    write_panel_csv(panel, BufWriter::new(file))?;

    let meta_path = sidecar_path(path);
    let mut json =
        serde_json::to_string_pretty(&panel.metadata).map_err(|e| PanelError::Metadata {
            path: meta_path.clone(),
            message: e.to_string(),
        })?;
    json.push('\n');
    std::fs::write(&meta_path, json).map_err(io(&meta_path))?;
    Ok(())
}

/// Reads a panel table and, when present, its sidecar.
///
/// A missing sidecar is allowed (externally supplied data) and yields default
/// metadata; a sidecar with a different schema version is rejected.
pub fn read_panel(path: &Path) -> Result<Panel, PanelError> {
    let file = File::open(path).map_err(|source| PanelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut panel = read_panel_csv(BufReader::new(file))?;
    let meta_path = sidecar_path(path);
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|source| PanelError::Io {
            path: meta_path.clone(),
            source,
        })?;
        panel.metadata = parse_metadata(&text).map_err(|e| match e {
            PanelError::Parse { message, .. } => PanelError::Metadata {
                path: meta_path.clone(),
                message,
            },
            other => other,
        })?;
    }
    Ok(panel)
}

fn parse_metadata(text: &str) -> Result<PanelMetadata, PanelError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(e.line() as u64, e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err(0, "missing schema_version"))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(PanelError::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| parse_err(0, e.to_string()))
}
