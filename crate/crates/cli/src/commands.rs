use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use garpcast_core::evalkit::{
    ccei_fitness_scatter, comparison_report, default_thresholds, evaluate, naive_forecasts,
    read_forecasts, write_agent_metrics_csv, write_histogram_csv, write_paired_csv,
    write_scatter_csv, write_summary_csv, write_survival_csv, Aggregate, EvalError, MetricReport,
    QuantileForecast,
};
use garpcast_core::panel::{
    format_f64, read_panel, sidecar_path, validate_panel, write_panel, Panel, SplitSpec,
};
use garpcast_core::revpref::{check_garp, compute_ccei};
use garpcast_core::syngen::{generate_panel, random_budget_forecast, stream_rng, StreamDomain};

use crate::manifest::{digest, Manifest, MANIFEST_FILE, MANIFEST_VERSION};
use crate::{Baseline, CheckArgs, CliError, Command, EvaluateArgs, GenerateArgs, ReplayArgs};

pub const PANEL_FILE: &str = "panel.csv";
pub const GEN_REPORT_FILE: &str = "gen_report.json";
pub const CHECK_FILE: &str = "check.csv";
pub const CHECK_SUMMARY_FILE: &str = "check_summary.json";
pub const EVAL_SUMMARY_FILE: &str = "evaluate_summary.json";

/// Result of a successful run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Human-readable summary lines.
    pub summary: String,
}

struct Produced {
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    seed: Option<u64>,
    summary: String,
}

pub fn run(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Replay(a) => replay(a),
        Command::Generate(a) => recorded(command, a.common.threads),
        Command::Check(a) => recorded(command, a.common.threads),
        Command::Evaluate(a) => recorded(command, a.common.threads),
    }
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))
}

/// The command with input paths made absolute, so its manifest replays from anywhere.
fn resolved(command: &Command) -> Result<Command, CliError> {
    let mut c = command.clone();
    match &mut c {
        Command::Check(a) => a.panel = absolute(&a.panel)?,
        Command::Evaluate(a) => {
            a.panel = absolute(&a.panel)?;
            for spec in a.forecasts.iter_mut() {
                let (name, path) = split_forecast_spec(spec)?;
                *spec = format!("{name}={}", absolute(Path::new(path))?.display());
            }
        }
        Command::Generate(_) | Command::Replay(_) => {}
    }
    Ok(c)
}

fn recorded(command: &Command, threads: usize) -> Result<Outcome, CliError> {
    let command = resolved(command)?;
    let out = command.out_dir().to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let (produced, used_threads) = pool.install(|| {
        let p = match &command {
            Command::Generate(a) => generate(a, &out),
            Command::Check(a) => check(a, &out),
            Command::Evaluate(a) => evaluate_cmd(a, &out),
            Command::Replay(_) => unreachable!("replay is not recorded"),
        };
        (p, rayon::current_num_threads())
    });
    let produced = produced?;
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        seed: produced.seed,
        threads: used_threads,
        inputs: produced
            .inputs
            .iter()
            .map(|p| digest(p, p.clone()))
            .collect::<Result<_, _>>()?,
        outputs: produced
            .outputs
            .iter()
            .map(|name| digest(&out.join(name), PathBuf::from(name)))
            .collect::<Result<_, _>>()?,
    };
    manifest.write(&out)?;
    Ok(Outcome {
        out_dir: out,
        manifest,
        summary: produced.summary,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn generate(a: &GenerateArgs, out: &Path) -> Result<Produced, CliError> {
    if !(0.0..=1.0).contains(&a.max_failure_rate) {
        return Err(CliError::Other(format!(
            "--max-failure-rate must be in [0, 1], got {}",
            a.max_failure_rate
        )));
    }
    let cfg = a.config();
    let (panel, report) = generate_panel(&cfg)?;
    write_json(&out.join(GEN_REPORT_FILE), &report)?;
    let allowed = (a.max_failure_rate * cfg.n_agents as f64).floor() as usize;
    if report.exhausted.len() > allowed || panel.is_empty() {
        let first = &report.exhausted[0];
        return Err(CliError::Exhaustion(format!(
            "{} of {} agents hit the {}-draw limit (allowed {allowed}); first: agent {} in period {}; see {}",
            report.exhausted.len(),
            cfg.n_agents,
            cfg.max_iterations,
            first.agent_index,
            first.period,
            out.join(GEN_REPORT_FILE).display()
        )));
    }
    let panel_path = out.join(PANEL_FILE);
    write_panel(&panel, &panel_path)?;
    let sidecar = sidecar_path(&panel_path);
    Ok(Produced {
        inputs: vec![],
        outputs: vec![
            PANEL_FILE.to_string(),
            sidecar.file_name().unwrap().to_string_lossy().into_owned(),
            GEN_REPORT_FILE.to_string(),
        ],
        seed: Some(cfg.master_seed),
        summary: format!(
            "generated {}/{} agents (T={}, K={}), {} exhausted, mean rejections per agent {:.3}",
            report.agents_generated,
            report.agents_requested,
            cfg.periods,
            cfg.goods,
            report.exhausted.len(),
            report.mean_rejections_per_agent()
        ),
    })
}

fn panel_inputs(path: &Path) -> Vec<PathBuf> {
    let mut v = vec![path.to_path_buf()];
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        v.push(sidecar);
    }
    v
}

fn load_valid_panel(path: &Path, budget_tolerance: f64) -> Result<Panel, CliError> {
    let panel = read_panel(path)?;
    let violations = validate_panel(&panel, budget_tolerance);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(CliError::Validation(lines.join("\n")));
    }
    Ok(panel)
}

fn check_tolerance(tol: f64) -> Result<(), CliError> {
    if tol > 0.0 && tol <= 0.1 {
        Ok(())
    } else {
        Err(CliError::Other(format!(
            "CCEI tolerance must be in (0, 0.1], got {tol}"
        )))
    }
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

#[derive(Debug, Serialize)]
struct CheckSummary {
    agents: usize,
    passers: usize,
    pass_rate: f64,
    mean_ccei: Option<f64>,
    median_ccei: Option<f64>,
    ccei_tolerance: f64,
}

fn check(a: &CheckArgs, out: &Path) -> Result<Produced, CliError> {
    check_tolerance(a.ccei_tolerance)?;
    let panel = load_valid_panel(&a.panel, a.budget_tolerance)?;
    let rows = panel
        .agents
        .par_iter()
        .map(|agent| {
            let verdict = check_garp(agent, 1.0)?;
            let ccei = compute_ccei(agent, a.ccei_tolerance)?;
            Ok((agent.agent_id.clone(), verdict, ccei.ccei))
        })
        .collect::<Result<Vec<_>, garpcast_core::revpref::RevPrefError>>()?;

    let mut w = csv_writer(&out.join(CHECK_FILE))?;
    w.write_record(["agent_id", "garp_pass", "ccei", "witness_cycle_length"])
        .map_err(csv_err)?;
    for (id, verdict, ccei) in &rows {
        let cycle = verdict
            .witness_cycle
            .as_ref()
            .map(|c| c.len().to_string())
            .unwrap_or_default();
        w.write_record([
            id.as_str(),
            &verdict.passes().to_string(),
            &format_f64(*ccei),
            &cycle,
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| CliError::io(&out.join(CHECK_FILE), e))?;

    let cceis: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let passers = rows.iter().filter(|r| r.1.passes()).count();
    let summary = CheckSummary {
        agents: rows.len(),
        passers,
        pass_rate: passers as f64 / rows.len().max(1) as f64,
        mean_ccei: (!cceis.is_empty()).then(|| cceis.iter().sum::<f64>() / cceis.len() as f64),
        median_ccei: median(&cceis),
        ccei_tolerance: a.ccei_tolerance,
    };
    write_json(&out.join(CHECK_SUMMARY_FILE), &summary)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    Ok(Produced {
        inputs: panel_inputs(&a.panel),
        outputs: vec![CHECK_FILE.to_string(), CHECK_SUMMARY_FILE.to_string()],
        seed: None,
        summary: format!(
            "GARP passers {}/{} ({:.4}), mean CCEI {}, median CCEI {}",
            summary.passers,
            summary.agents,
            summary.pass_rate,
            fmt(summary.mean_ccei),
            fmt(summary.median_ccei)
        ),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Other(e.to_string())
}

fn split_forecast_spec(spec: &str) -> Result<(&str, &str), CliError> {
    spec.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| {
            CliError::Other(format!("forecast must be given as NAME=PATH, got `{spec}`"))
        })
}

fn valid_model_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

/// The random feasible-budget benchmark for every agent. Agent `i` draws from
/// its own stream, so results do not depend on thread count.
pub fn random_forecasts(
    panel: &Panel,
    split: &SplitSpec,
    seed: u64,
) -> Result<Vec<QuantileForecast>, CliError> {
    panel
        .agents
        .par_iter()
        .enumerate()
        .map(|(i, agent)| {
            let (_, hold) = agent.split(split)?;
            let prices: Vec<Vec<f64>> = hold.iter().map(|o| o.prices.clone()).collect();
            let mut rng = stream_rng(seed, StreamDomain::RandomBaseline, i as u64);
            let rows = random_budget_forecast(&prices, agent.budget, &mut rng)?;
            Ok(QuantileForecast::from_point(agent.agent_id.clone(), &rows)?)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    model: String,
    aggregate: Aggregate,
}

#[derive(Debug, Serialize)]
struct ComparisonSummary {
    model_a: String,
    model_b: String,
    wins: usize,
    losses: usize,
    ties: usize,
    excluded: usize,
    count_a_at_075: usize,
    count_b_at_075: usize,
    agents: usize,
}

#[derive(Debug, Serialize)]
struct ScatterSummary {
    model: String,
    correlation: Option<f64>,
    passer_mean_fitness: Option<f64>,
    non_passer_mean_fitness: Option<f64>,
    passers: usize,
    points: usize,
}

#[derive(Debug, Serialize)]
struct HorizonSummary {
    horizon: usize,
    models: Vec<ModelSummary>,
    comparisons: Vec<ComparisonSummary>,
    scatter: Vec<ScatterSummary>,
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    context: usize,
    rearranged_cells: BTreeMap<String, usize>,
    horizons: Vec<HorizonSummary>,
}

fn compare_pairs(a: &EvaluateArgs, models: &[String]) -> Result<Vec<(String, String)>, CliError> {
    if a.compare.is_empty() {
        return Ok(models
            .iter()
            .skip(1)
            .map(|m| (models[0].clone(), m.clone()))
            .collect());
    }
    a.compare
        .iter()
        .map(|spec| {
            let (x, y) = spec
                .split_once(',')
                .ok_or_else(|| CliError::Other(format!("--compare expects A,B, got `{spec}`")))?;
            for m in [x, y] {
                if !models.iter().any(|n| n == m) {
                    return Err(CliError::Other(format!(
                        "--compare names unknown model `{m}`"
                    )));
                }
            }
            Ok((x.to_string(), y.to_string()))
        })
        .collect()
}

fn evaluate_cmd(a: &EvaluateArgs, out: &Path) -> Result<Produced, CliError> {
    check_tolerance(a.ccei_tolerance)?;
    let panel = load_valid_panel(&a.panel, garpcast_core::panel::DEFAULT_BUDGET_TOLERANCE)?;
    let mut inputs = panel_inputs(&a.panel);

    let mut external: Vec<(String, Vec<QuantileForecast>)> = Vec::new();
    let mut rearranged = BTreeMap::new();
    for spec in &a.forecasts {
        let (name, path) = split_forecast_spec(spec)?;
        let path = Path::new(path);
        let set = read_forecasts(path)?;
        rearranged.insert(name.to_string(), set.rearranged_cells);
        inputs.push(path.to_path_buf());
        external.push((name.to_string(), set.forecasts));
    }
    let mut models: Vec<String> = external.iter().map(|(n, _)| n.clone()).collect();
    models.extend(a.baselines.iter().map(|b| b.model_name().to_string()));
    if models.is_empty() {
        return Err(CliError::Other(
            "nothing to evaluate: give --forecast or --baselines".into(),
        ));
    }
    for (i, m) in models.iter().enumerate() {
        if !valid_model_name(m) {
            return Err(CliError::Other(format!(
                "model name `{m}` may only contain ASCII letters, digits, '-', '_' and '.'"
            )));
        }
        if models[..i].contains(m) {
            return Err(CliError::Other(format!("model name `{m}` is used twice")));
        }
    }
    let pairs = compare_pairs(a, &models)?;
    if a.horizon.is_empty() {
        return Err(CliError::Other("at least one --horizon is required".into()));
    }

    let mut outputs = Vec::new();
    let mut horizons = Vec::new();
    let mut lines = Vec::new();
    for &h in &a.horizon {
        let split = SplitSpec::new(a.context, h)?;
        let mut reports: Vec<MetricReport> = Vec::new();
        for (name, fc) in &external {
            reports.push(evaluate(&panel, fc, &split, name)?);
        }
        for &b in &a.baselines {
            let fc = match b {
                Baseline::Naive => naive_forecasts(&panel, &split)?,
                Baseline::Random => random_forecasts(&panel, &split, a.seed)?,
            };
            reports.push(evaluate(&panel, &fc, &split, b.model_name())?);
        }

        for r in &reports {
            let name = format!("metrics_{}_h{h}.csv", r.model_name);
            write_agent_metrics_csv(r, create(&out.join(&name))?)?;
            outputs.push(name);
        }
        let name = format!("summary_h{h}.csv");
        write_summary_csv(&reports, create(&out.join(&name))?)?;
        outputs.push(name);

        let report = |m: &str| {
            reports
                .iter()
                .find(|r| r.model_name == m)
                .expect("model list is complete")
        };
        let thresholds = default_thresholds();
        let at_075 = thresholds
            .iter()
            .position(|&t| t == 0.75)
            .expect("0.75 is a default threshold");
        let mut comparisons = Vec::new();
        for (x, y) in &pairs {
            let t = comparison_report(report(x), report(y), &thresholds)?;
            let stem = format!("{x}_vs_{y}_h{h}.csv");
            type Writer = fn(
                &garpcast_core::evalkit::ComparisonTables,
                BufWriter<File>,
            ) -> Result<(), EvalError>;
            let writers: [(&str, Writer); 3] = [
                ("survival", write_survival_csv),
                ("histogram", write_histogram_csv),
                ("paired", write_paired_csv),
            ];
            for (kind, write) in writers {
                let name = format!("{kind}_{stem}");
                write(&t, create(&out.join(&name))?)?;
                outputs.push(name);
            }
            comparisons.push(ComparisonSummary {
                model_a: x.clone(),
                model_b: y.clone(),
                wins: t.wins,
                losses: t.losses,
                ties: t.ties,
                excluded: t.excluded,
                count_a_at_075: t.count_a[at_075],
                count_b_at_075: t.count_b[at_075],
                agents: t.paired.len(),
            });
        }

        let mut scatter = Vec::new();
        for r in &reports {
            let s = ccei_fitness_scatter(&panel, r, a.ccei_tolerance)?;
            let name = format!("scatter_{}_h{h}.csv", r.model_name);
            write_scatter_csv(&s, create(&out.join(&name))?)?;
            outputs.push(name);
            scatter.push(ScatterSummary {
                model: r.model_name.clone(),
                correlation: s.correlation,
                passer_mean_fitness: s.passer_mean_fitness,
                non_passer_mean_fitness: s.non_passer_mean_fitness,
                passers: s.points.iter().filter(|p| p.exact_passer).count(),
                points: s.points.len(),
            });
        }

        lines.push(format!("H={h}"));
        for r in &reports {
            let agg = &r.aggregate;
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            let mase: Vec<String> = agg.mase.iter().map(|s| f(s.mean)).collect();
            lines.push(format!(
                "  {:<16} MASE [{}]  bundle l2 {}  fitness {}",
                r.model_name,
                mase.join(", "),
                f(agg.bundle_l2.mean),
                f(agg.fitness.mean)
            ));
        }
        for c in &comparisons {
            lines.push(format!(
                "  {} vs {}: {} better, {} worse, {} tied",
                c.model_b, c.model_a, c.wins, c.losses, c.ties
            ));
        }
        horizons.push(HorizonSummary {
            horizon: h,
            models: reports
                .into_iter()
                .map(|r| ModelSummary {
                    model: r.model_name,
                    aggregate: r.aggregate,
                })
                .collect(),
            comparisons,
            scatter,
        });
    }
    let summary = EvaluationSummary {
        context: a.context,
        rearranged_cells: rearranged,
        horizons,
    };
    write_json(&out.join(EVAL_SUMMARY_FILE), &summary)?;
    outputs.push(EVAL_SUMMARY_FILE.to_string());
    for (m, n) in &summary.rearranged_cells {
        if *n > 0 {
            lines.push(format!(
                "note: {n} crossing quantile cell(s) in `{m}` were sorted"
            ));
        }
    }
    Ok(Produced {
        inputs,
        outputs,
        seed: a.baselines.contains(&Baseline::Random).then_some(a.seed),
        summary: lines.join("\n"),
    })
}

fn replay(a: &ReplayArgs) -> Result<Outcome, CliError> {
    let recorded_manifest = Manifest::read(&a.manifest)?;
    let mut problems = Vec::new();
    for input in &recorded_manifest.inputs {
        match digest(&input.path, input.path.clone()) {
            Ok(d) if d.sha256 == input.sha256 => {}
            Ok(_) => problems.push(format!("  input {} changed", input.path.display())),
            Err(e) => problems.push(format!("  input {}", e)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::ReplayMismatch(problems.join("\n")));
    }
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.manifest.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    if out.join(MANIFEST_FILE) == a.manifest
        || absolute(&out).ok() == a.manifest.parent().and_then(|p| absolute(p).ok())
    {
        return Err(CliError::Other(
            "replay output directory must differ from the recorded one".into(),
        ));
    }
    let mut command = recorded_manifest.command.clone();
    command.set_out_dir(out);
    if let Some(t) = a.threads {
        match &mut command {
            Command::Generate(g) => g.common.threads = t,
            Command::Check(c) => c.common.threads = t,
            Command::Evaluate(e) => e.common.threads = t,
            Command::Replay(_) => {}
        }
    }
    if matches!(command, Command::Replay(_)) {
        return Err(CliError::Other(
            "a replay manifest cannot record another replay".into(),
        ));
    }
    let outcome = run(&command)?;
    let fresh: BTreeMap<&Path, &str> = outcome
        .manifest
        .outputs
        .iter()
        .map(|d| (d.path.as_path(), d.sha256.as_str()))
        .collect();
    for d in &recorded_manifest.outputs {
        match fresh.get(d.path.as_path()) {
            Some(sha) if *sha == d.sha256 => {}
            Some(_) => problems.push(format!("  {} differs", d.path.display())),
            None => problems.push(format!("  {} was not produced", d.path.display())),
        }
    }
    if fresh.len() != recorded_manifest.outputs.len() {
        problems.push(format!(
            "  {} outputs recorded, {} produced",
            recorded_manifest.outputs.len(),
            fresh.len()
        ));
    }
    if !problems.is_empty() {
        return Err(CliError::ReplayMismatch(problems.join("\n")));
    }
    Ok(Outcome {
        summary: format!(
            "replay matched {} output(s) in {}",
            recorded_manifest.outputs.len(),
            outcome.out_dir.display()
        ),
        ..outcome
    })
}
