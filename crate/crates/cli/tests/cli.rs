use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dgreedy::Subset;
use dgreedy_cli::config::{load_config, resolve};
use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn dgreedy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgreedy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_into(config: &Path, dir: &Path) -> Output {
    dgreedy(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Copy a bundled scenario into `dir` after editing its JSON.
fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&scenario(name));
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

/// Plain greedy by exhaustive marginal-gain scan, lowest index on ties.
fn oracle_greedy(config: &Path) -> Vec<usize> {
    let exp = resolve(&load_config(config).unwrap()).unwrap();
    let f = exp.run.objective();
    let m = exp.run.ground_size();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..exp.run.k.min(m) {
        let current: Subset = chosen.iter().map(|&v| dgreedy::Element(v)).collect();
        let base = f.eval(current);
        let mut best: Option<(usize, f64)> = None;
        for v in (0..m).filter(|v| !chosen.contains(v)) {
            let gain = f.eval(current.with(dgreedy::Element(v))) - base;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((v, gain));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen.into_iter().map(|v| v + 1).collect()
}

fn ids(v: &Value) -> Vec<usize> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect()
}

#[test]
fn exact_consensus_matches_centralized_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("exact_consensus.json");
    let out = run_into(&config, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["audits_pass"], Value::Bool(true));
    assert_eq!(ids(&summary["selected"]), oracle_greedy(&config));
    assert_eq!(summary["selected"], summary["greedy"]["selected"]);
    assert_eq!(summary["parameters"]["psi"].as_f64(), Some(0.0));
    for name in ["trace.csv", "trace.sets.csv", "bounds.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn tradeoff_sweep_has_strictly_decreasing_error_term() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let out = dgreedy(&[
        "sweep",
        "--config",
        scenario("tradeoff.json").to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (t_col, e_col) = (col("T"), col("E_r"));
    let rows: Vec<(usize, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[t_col].parse().unwrap(), r[e_col].parse().unwrap())
        })
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        (1..=12).collect::<Vec<_>>()
    );
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1), "{rows:?}");
    // P3 with Metropolis weights: μ = 2/3, F_h = 6 for the shared objective, K = 2
    for &(t, e_r) in &rows {
        let expected = 6.0 * 2.0 * 3f64.sqrt() * 6.0 * (2.0f64 / 3.0).powi(t as i32);
        assert!(
            (e_r - expected).abs() <= 1e-12 * expected,
            "T = {t}: {e_r} vs {expected}"
        );
    }
}

#[test]
fn inconsistent_t_prime_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited("tradeoff.json", dir.path(), |v| v["T_prime"] = 20.into());
    let out = run_into(&config, &dir.path().join("out"));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`T_prime`"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn schema_errors_exit_2_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited("tradeoff.json", dir.path(), |v| {
        v["graph"]["n"] = "three".into()
    });
    let out = dgreedy(&["validate-config", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`graph.n`"), "{}", stderr(&out));

    let config = edited("tradeoff.json", dir.path(), |v| v["tight_fh"] = true.into());
    let out = dgreedy(&["validate-config", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("tight_fh"), "{}", stderr(&out));

    let ok = dgreedy(&[
        "validate-config",
        "--config",
        scenario("tradeoff.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0);
}

#[test]
fn replay_reproduces_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("weak_submodular.json");
    assert_eq!(code(&run_into(&config, dir.path())), 0);
    let trace = dir.path().join("trace.csv");
    let args = [
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ];
    let first = dgreedy(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(first.stdout, dgreedy(&args).stdout);
    let report: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["notes"], Value::Array(vec![]));
    assert_eq!(report["bounds"], read_json(&dir.path().join("bounds.json")));

    let out = dir.path().join("analyzed.json");
    let analyzed = dgreedy(&[
        "analyze",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&analyzed), 0);
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(dir.path().join("bounds.json")).unwrap()
    );
}

#[test]
fn truncated_trace_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario("facility_path.json");
    assert_eq!(code(&run_into(&config, dir.path())), 0);
    let trace = dir.path().join("trace.csv");
    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    fs::write(&trace, lines[..lines.len() - 3].join("\n") + "\n").unwrap();
    let out = dgreedy(&[
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("dimension mismatch"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn replay_against_a_different_size_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(&scenario("tradeoff.json"), dir.path())), 0);
    let other = edited("tradeoff.json", dir.path(), |v| v["T"] = 9.into());
    let trace = dir.path().join("trace.csv");
    let out = dgreedy(&[
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("T: trace 8, config 9"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn intersection_flag_mismatch_is_noted() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run_into(&scenario("strict_intersection.json"), dir.path())),
        0
    );
    let header = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(header.contains("#intersection=strict_neighbors"));
    let relaxed = edited("strict_intersection.json", dir.path(), |v| {
        v["strict_paper_intersection"] = false.into()
    });
    let trace = dir.path().join("trace.csv");
    let out = dgreedy(&[
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        relaxed.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let notes = report["notes"].as_array().unwrap();
    assert_eq!(notes.len(), 1, "{notes:?}");
    assert!(notes[0]
        .as_str()
        .unwrap()
        .starts_with("strict_paper_intersection mismatch"));
}

#[test]
fn summaries_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["erdos_renyi.json", "strict_intersection.json"] {
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        assert_eq!(code(&run_into(&scenario(name), &a)), 0);
        assert_eq!(code(&run_into(&scenario(name), &b)), 0);
        for file in ["summary.json", "bounds.json", "trace.csv", "trace.sets.csv"] {
            assert_eq!(
                fs::read(a.join(file)).unwrap(),
                fs::read(b.join(file)).unwrap(),
                "{name}: {file}"
            );
        }
    }
}

#[test]
fn seed_changes_the_instance() {
    let dir = tempfile::tempdir().unwrap();
    let reseeded = edited("erdos_renyi.json", dir.path(), |v| v["seed"] = 2025.into());
    let read_graph = |config: &Path| resolve(&load_config(config).unwrap()).unwrap().run.network;
    assert_ne!(
        read_graph(&scenario("erdos_renyi.json")),
        read_graph(&reseeded)
    );
}

#[test]
fn baselines() {
    let config = scenario("exact_consensus.json");
    let run_baseline = |which: &str| {
        let out = dgreedy(&[
            "baseline",
            "--config",
            config.to_str().unwrap(),
            "--which",
            which,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let greedy = run_baseline("greedy");
    assert_eq!(ids(&greedy["selected"]), oracle_greedy(&config));
    let optimum = run_baseline("optimum");
    assert!(optimum["value"].as_f64().unwrap() >= greedy["value"].as_f64().unwrap());
    let perturbed = run_baseline("perturbed");
    assert_eq!(perturbed, run_baseline("perturbed"));
    assert_eq!(perturbed["taus"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn perturbation_length_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited("exact_consensus.json", dir.path(), |v| {
        v["baseline"] = serde_json::json!({"taus": [0.5]})
    });
    let out = dgreedy(&["validate-config", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("baseline.taus"), "{}", stderr(&out));
}

#[test]
fn every_bundled_scenario_runs_quickly_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let mut count = 0;
    for entry in fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let start = Instant::now();
        let out = run_into(&path, &dir.path().join(path.file_stem().unwrap()));
        assert!(
            start.elapsed() < Duration::from_secs(60),
            "{}",
            path.display()
        );
        assert_eq!(code(&out), 0, "{}: {}", path.display(), stderr(&out));
        count += 1;
    }
    assert!(count >= 7);
}

#[test]
fn audit_failure_exits_1_with_margins() {
    // undersized ψ on a path: agents disagree on the maximizer and the
    // threshold no longer covers the consensus error
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("undersized.json");
    let text = serde_json::json!({
        "scenario": "undersized",
        "graph": {"kind": "path", "n": 3},
        "mixing": "lazy",
        "locals": [
            {"kind": "modular", "weights": [0.0, 6.0]},
            {"kind": "modular", "weights": [6.0, 0.0]},
            {"kind": "modular", "weights": [0.0, 6.0]}
        ],
        "K": 1,
        "T": 1,
        "psi": 3.0,
        "strict_psi": false
    });
    fs::write(&config, text.to_string()).unwrap();
    let out = run_into(&config, &dir.path().join("out"));
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("margin"), "{}", stderr(&out));
    let summary = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["audits_pass"], Value::Bool(false));
}
