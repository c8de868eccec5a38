use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use garpcast_cli::{
    EXIT_COVERAGE, EXIT_EXHAUSTION, EXIT_OTHER, EXIT_REPLAY_MISMATCH, EXIT_VALIDATION,
};
use garpcast_core::evalkit::{write_forecasts, QuantileForecast};
use garpcast_core::panel::{read_panel, SplitSpec};

fn garpcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_garpcast"))
        .args(args)
        .env_remove("GARPCAST_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = garpcast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    garpcast(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn generate(dir: &Path, agents: &str, seed: &str) -> PathBuf {
    ok(&[
        "generate",
        "--agents",
        agents,
        "--periods",
        "50",
        "--goods",
        "3",
        "--budget",
        "100",
        "--seed",
        seed,
        "--out",
        s(dir),
    ]);
    dir.join("panel.csv")
}

const TWO_AGENTS: &str = "\
agent_id,t,p_1,p_2,q_1,q_2,budget
consistent,1,1,1,4,0,6
consistent,2,1,2,3,1.5,6
violator,1,1,1,4,0,6
violator,2,1,2,0,2.5,6
";

#[test]
fn generate_is_deterministic_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let stdout = ok(&[
        "generate",
        "--agents",
        "100",
        "--periods",
        "50",
        "--goods",
        "3",
        "--budget",
        "100",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    assert!(stdout.contains("generated 100/100 agents"));
    ok(&[
        "generate",
        "--agents",
        "100",
        "--periods",
        "50",
        "--goods",
        "3",
        "--budget",
        "100",
        "--seed",
        "7",
        "--threads",
        "3",
        "--out",
        s(&b),
    ]);
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_eq!(
        std::fs::read(a.join("panel.csv")).unwrap(),
        std::fs::read(b.join("panel.csv")).unwrap()
    );
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("panel.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["schema_version"], 1);
}

#[test]
fn fresh_panel_checks_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = generate(&tmp.path().join("g"), "40", "3");
    let out = tmp.path().join("c");
    let stdout = ok(&["check", s(&panel), "--out", s(&out)]);
    assert!(
        stdout.contains("GARP passers 40/40 (1.0000), mean CCEI 1.0000"),
        "{stdout}"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("check_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass_rate"], 1.0);
}

#[test]
fn two_agent_file_with_violator() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("two.csv");
    std::fs::write(&panel, TWO_AGENTS).unwrap();
    let out = tmp.path().join("c");
    let stdout = ok(&["check", s(&panel), "--out", s(&out)]);
    assert!(stdout.contains("GARP passers 1/2"), "{stdout}");
    let mut rdr = csv::Reader::from_path(out.join("check.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&rows[0][0], "consistent");
    assert_eq!((&rows[0][1], &rows[0][3]), ("true", ""));
    assert_eq!((&rows[1][1], &rows[1][3]), ("false", "2"));
    let ccei: f64 = rows[1][2].parse().unwrap();
    assert!((ccei - 0.8).abs() <= 1e-4, "{ccei}");
    // inputs are recorded but untouched
    assert_eq!(std::fs::read_to_string(&panel).unwrap(), TWO_AGENTS);
    assert_eq!(manifest(&out)["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn naive_baseline_on_constant_panel_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("constant.csv");
    let mut text = String::from("agent_id,t,p_1,p_2,p_3,q_1,q_2,q_3,budget\n");
    for a in 0..5 {
        for t in 1..=40 {
            let p = 1.0 + (t % 3) as f64;
            text.push_str(&format!("c{a},{t},{p},2,1,{},3,4,100\n", a + 1));
        }
    }
    std::fs::write(&panel, text).unwrap();
    let out = tmp.path().join("e");
    ok(&[
        "evaluate",
        s(&panel),
        "--context",
        "35",
        "--horizon",
        "5",
        "--baselines",
        "naive",
        "--out",
        s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("metrics_naive_h5.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let fit = headers.iter().position(|h| h == "fitness").unwrap();
    let mase = headers.iter().position(|h| h == "mase_1").unwrap();
    for row in rdr.records().map(Result::unwrap) {
        assert_eq!(row[fit].parse::<f64>().unwrap(), 1.0);
        // constant context: MASE undefined and left empty
        assert_eq!(&row[mase], "");
    }
    let summary = std::fs::read_to_string(out.join("summary_h5.csv")).unwrap();
    let line = summary.lines().nth(1).unwrap();
    assert!(line.ends_with(",5,15,0"), "{line}");
}

#[test]
fn seeded_random_baseline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = generate(&tmp.path().join("g"), "30", "5");
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "evaluate",
            s(&panel),
            "--horizon",
            "10",
            "--baselines",
            "random",
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        std::fs::read(out.join("metrics_random_h10.csv")).unwrap()
    };
    let first = run("r1", "11");
    assert_eq!(first, run("r2", "11"));
    assert_ne!(first, run("r3", "12"));
}

#[test]
fn external_forecasts_and_comparisons() {
    let tmp = tempfile::tempdir().unwrap();
    let panel_path = generate(&tmp.path().join("g"), "20", "9");
    let panel = read_panel(&panel_path).unwrap();
    let split = SplitSpec::new(35, 10).unwrap();
    let perfect: Vec<QuantileForecast> = panel
        .agents
        .iter()
        .map(|a| {
            let (_, hold) = a.split(&split).unwrap();
            let rows: Vec<Vec<f64>> = hold.iter().map(|o| o.quantities.clone()).collect();
            QuantileForecast::from_point(a.agent_id.clone(), &rows).unwrap()
        })
        .collect();
    let fc = tmp.path().join("perfect.csv");
    write_forecasts(&perfect, &fc).unwrap();
    let out = tmp.path().join("e");
    let spec = format!("oracle={}", fc.display());
    let stdout = ok(&[
        "evaluate",
        s(&panel_path),
        "--forecast",
        &spec,
        "--horizon",
        "5,10",
        "--baselines",
        "naive",
        "--out",
        s(&out),
    ]);
    assert!(
        stdout.contains("naive vs oracle: 0 better, 20 worse, 0 tied"),
        "{stdout}"
    );
    for name in [
        "metrics_oracle_h5.csv",
        "summary_h10.csv",
        "survival_oracle_vs_naive_h10.csv",
        "histogram_oracle_vs_naive_h10.csv",
        "paired_oracle_vs_naive_h10.csv",
        "scatter_oracle_h10.csv",
        "evaluate_summary.json",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let m = manifest(&out);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    // forecasts shorter than the horizon are a coverage failure
    assert_eq!(
        code(&[
            "evaluate",
            s(&panel_path),
            "--forecast",
            &spec,
            "--horizon",
            "15",
            "--out",
            s(&tmp.path().join("x"))
        ]),
        EXIT_COVERAGE as i32
    );
}

#[test]
fn missing_agents_exit_with_coverage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let panel_path = generate(&tmp.path().join("g"), "4", "2");
    let panel = read_panel(&panel_path).unwrap();
    let some: Vec<QuantileForecast> = panel.agents[..2]
        .iter()
        .map(|a| QuantileForecast::from_point(a.agent_id.clone(), &vec![vec![1.0; 3]; 10]).unwrap())
        .collect();
    let fc = tmp.path().join("partial.csv");
    write_forecasts(&some, &fc).unwrap();
    let out = garpcast(&[
        "evaluate",
        s(&panel_path),
        "--forecast",
        &format!("m={}", fc.display()),
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_COVERAGE as i32));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("agent_000002") && err.contains("agent_000003"),
        "{err}"
    );
}

#[test]
fn invalid_panel_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("bad.csv");
    std::fs::write(
        &panel,
        TWO_AGENTS.replace("violator,2,1,2", "violator,2,-1,2"),
    )
    .unwrap();
    let out = garpcast(&["check", s(&panel), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION as i32));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("violator") && err.contains("period 2"),
        "{err}"
    );
    std::fs::write(&panel, "agent_id,t,p_1,p_2,q_1,budget\n").unwrap();
    assert_eq!(
        code(&["check", s(&panel), "--out", s(&tmp.path().join("c"))]),
        EXIT_VALIDATION as i32
    );
}

#[test]
fn exhaustion_exits_with_its_own_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let args = [
        "generate",
        "--agents",
        "20",
        "--periods",
        "4",
        "--max-iterations",
        "1",
        "--seed",
        "1",
        "--out",
        s(&out),
    ];
    assert_eq!(code(&args), EXIT_EXHAUSTION as i32);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gen_report.json")).unwrap())
            .unwrap();
    let exhausted = report["exhausted"].as_array().unwrap().len();
    assert!(exhausted > 0 && exhausted < 20, "{exhausted}");
    assert!(!out.join("panel.csv").exists());
    let mut tolerant = args.to_vec();
    tolerant.extend(["--max-failure-rate", "1"]);
    let stdout = ok(&tolerant);
    assert!(
        stdout.contains(&format!("generated {}/20 agents", 20 - exhausted)),
        "{stdout}"
    );
    assert_eq!(
        read_panel(&out.join("panel.csv")).unwrap().len(),
        20 - exhausted
    );
}

#[test]
fn replay_reproduces_and_detects_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = generate(&tmp.path().join("g"), "10", "4");
    let stdout = ok(&["replay", s(&tmp.path().join("g/manifest.json"))]);
    assert!(stdout.contains("replay matched 3 output(s)"), "{stdout}");

    let copy = tmp.path().join("input.csv");
    std::fs::copy(&panel, &copy).unwrap();
    let check_dir = tmp.path().join("c");
    ok(&["check", s(&copy), "--out", s(&check_dir)]);
    ok(&[
        "replay",
        s(&check_dir.join("manifest.json")),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    let text = std::fs::read_to_string(&copy).unwrap();
    std::fs::write(&copy, text.replacen("agent_000000", "agent_999999", 1)).unwrap();
    assert_eq!(
        code(&[
            "replay",
            s(&check_dir.join("manifest.json")),
            "--out",
            s(&tmp.path().join("r2"))
        ]),
        EXIT_REPLAY_MISMATCH as i32
    );
}

#[test]
fn out_dir_from_environment_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_garpcast"))
        .args(["generate", "--agents", "3", "--periods", "4"])
        .env("GARPCAST_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("panel.csv").is_file());
    assert_eq!(code(&["generate", "--agents", "many"]), EXIT_OTHER as i32);
    assert_eq!(
        code(&[
            "evaluate",
            s(&dir.join("panel.csv")),
            "--out",
            s(&tmp.path().join("e"))
        ]),
        EXIT_OTHER as i32
    );
    assert_eq!(code(&["--help"]), 0);
}
