//! Subcommand implementations. Each returns the process exit status on
//! success; errors map to a status through [`CliError::exit_code`].

use std::fs;
use std::path::Path;

use dgreedy::analysis::{bounds_report, sweep_point, BoundsReport, SweepRow};
use dgreedy::baseline::{
    brute_force_optimum, centralized_greedy, perturbed_greedy, BaselineError, GreedyResult, Optimum,
};
use dgreedy::protocol::{run, RunTrace, TraceHeader};
use dgreedy::seeding::derive_seed;
use dgreedy::setfn::check_structure;
use dgreedy::Element;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_config, parse_t_values, resolve, Experiment, PsiConfig};
use crate::error::CliError;
use crate::json::{self, format_f64};
use crate::trace_io::{read_trace, write_trace};

fn ids(elements: impl IntoIterator<Item = Element>) -> Vec<usize> {
    elements.into_iter().map(Element::id).collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load(config_path: &Path) -> Result<Experiment, CliError> {
    resolve(&load_config(config_path)?)
}

/// The exact optimum, or `None` with a warning when enumeration is too large.
fn optimum(exp: &Experiment) -> Option<Optimum> {
    match brute_force_optimum(&exp.run.objective(), exp.run.k) {
        Ok(o) => Some(o),
        Err(e) => {
            log::warn!("skipping the exact optimum: {e}");
            None
        }
    }
}

/// Per-agent submodularity ratios, when the corollary audit is enabled.
fn gammas(exp: &Experiment) -> Option<Vec<f64>> {
    if !exp.config.audits.corollary1 {
        return None;
    }
    let mut out = Vec::with_capacity(exp.run.n());
    for (i, f) in exp.run.family.locals.iter().enumerate() {
        match check_structure(f) {
            Ok(report) => out.push(report.submodularity_ratio),
            Err(e) => {
                log::warn!("cannot compute γ for agent {}: {e}", i + 1);
                return Some(Vec::new());
            }
        }
    }
    Some(out)
}

/// Bounds for a trace with disabled audits stripped.
fn report_for(
    exp: &Experiment,
    trace: &RunTrace,
    optimum: Option<f64>,
) -> Result<(BoundsReport, bool), CliError> {
    let gammas = gammas(exp);
    let mut report = bounds_report(trace, &exp.run, optimum, gammas.as_deref())
        .map_err(|e| CliError::Dimension(e.to_string()))?;
    let audits = &exp.config.audits;
    if !audits.theorem1 {
        report.theorem1 = None;
    }
    if !audits.corollary1 {
        report.corollary1 = None;
    }
    let pass = (!audits.lemmas || report.lemmas.all_pass())
        && report.theorem1.as_ref().is_none_or(|c| c.holds)
        && report.corollary1.as_ref().is_none_or(|c| c.passes());
    Ok((report, pass))
}

/// Print every failed check with its margin.
fn print_failures(report: &BoundsReport, lemmas_enabled: bool) {
    if lemmas_enabled {
        let l = &report.lemmas;
        let named = [
            ("conservation", &l.conservation),
            ("lemma2", &l.lemma2),
            ("lemma3", &l.lemma3),
            ("lemma4", &l.lemma4),
            ("lemma5", &l.lemma5),
            ("agreement", &l.agreement),
        ];
        for (name, check) in named {
            if !check.holds {
                let margin = check.margin.map(format_f64).unwrap_or_else(|| "n/a".into());
                eprintln!(
                    "audit {name} failed (margin {margin}): {}",
                    check.failure.as_deref().unwrap_or("")
                );
            }
        }
    }
    if let Some(c) = report.theorem1.as_ref().filter(|c| !c.holds) {
        eprintln!(
            "audit theorem1 failed: achieved {} < {} (margin {})",
            c.achieved,
            c.rhs,
            format_f64(c.margin)
        );
    }
    if let Some(c) = report.corollary1.as_ref().filter(|c| !c.passes()) {
        eprintln!("audit corollary1 failed: {}", json::to_string(c).trim_end());
    }
}

#[derive(Serialize)]
struct Parameters {
    graph: String,
    n: usize,
    ground: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "T_prime")]
    t_prime: usize,
    diameter: usize,
    psi: f64,
    mu: f64,
    #[serde(rename = "F_h")]
    f_h: f64,
    #[serde(rename = "epsilon_T")]
    epsilon_t: f64,
    intersection: String,
    threshold_slack: f64,
}

#[derive(Serialize)]
struct Selection {
    selected: Vec<usize>,
    value: f64,
}

#[derive(Serialize)]
struct AuditFlags {
    lemmas: Option<bool>,
    theorem1: Option<bool>,
    corollary1: Option<bool>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    seed: u64,
    parameters: Parameters,
    selected: Vec<usize>,
    value: f64,
    greedy: Selection,
    optimum: Option<Selection>,
    audits: AuditFlags,
    audits_pass: bool,
}

fn parameters(exp: &Experiment, h: &TraceHeader) -> Parameters {
    Parameters {
        graph: exp.config.graph.describe(),
        n: h.n,
        ground: h.ground,
        k: h.k,
        t: h.t,
        t_prime: h.t_prime,
        diameter: h.diameter,
        psi: h.psi,
        mu: h.mu,
        f_h: h.f_h,
        epsilon_t: h.epsilon_t,
        intersection: h.intersection.to_string(),
        threshold_slack: h.threshold_slack,
    }
}

/// `run`: simulate, write the trace, summary and bounds, and report.
pub fn run_experiment(config_path: &Path, out_dir: Option<&Path>) -> Result<u8, CliError> {
    let exp = load(config_path)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| exp.output_dir());
    let trace = run(&exp.run)?;
    let greedy = centralized_greedy(&exp.run.objective(), exp.run.k);
    let opt = optimum(&exp);
    let (report, pass) = report_for(&exp, &trace, opt.as_ref().map(|o| o.value))?;

    let audits = &exp.config.audits;
    let summary = Summary {
        scenario: &exp.config.scenario,
        seed: exp.config.seed,
        parameters: parameters(&exp, &trace.header),
        selected: ids(trace.selected.iter().copied()),
        value: trace.value,
        greedy: Selection {
            selected: ids(greedy.selected.iter().copied()),
            value: greedy.value(),
        },
        optimum: opt.as_ref().map(|o| Selection {
            selected: ids(o.set.iter()),
            value: o.value,
        }),
        audits: AuditFlags {
            lemmas: audits.lemmas.then(|| report.lemmas.all_pass()),
            theorem1: report.theorem1.as_ref().map(|c| c.holds),
            corollary1: report.corollary1.as_ref().map(|c| c.passes()),
        },
        audits_pass: pass,
    };

    let outputs = &exp.config.outputs;
    write_trace(&trace, &dir.join(&outputs.trace))?;
    write_text(&dir.join(&outputs.summary), &json::to_string(&summary))?;
    write_text(&dir.join(&outputs.bounds), &json::to_string(&report))?;

    println!(
        "{}: selected {:?}, f = {}, greedy f = {}, audits {}",
        exp.config.scenario,
        summary.selected,
        trace.value,
        greedy.value(),
        if pass { "pass" } else { "FAIL" }
    );
    println!("wrote {}", dir.display());
    if pass {
        Ok(0)
    } else {
        print_failures(&report, audits.lemmas);
        Ok(1)
    }
}

/// Run one config over several consensus lengths in parallel.
pub fn sweep_rows(
    exp: &Experiment,
    t_values: &[usize],
    psi: PsiConfig,
) -> Result<Vec<SweepRow>, CliError> {
    if t_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::field(
            "sweep.T",
            "values must be strictly increasing",
        ));
    }
    let opt = optimum(exp).map(|o| o.value);
    t_values
        .par_iter()
        .map(|&t| {
            sweep_point(&exp.run, psi.into(), t, opt).map_err(|e| CliError::field("sweep", e))
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record([
        "T", "psi", "psi_min", "epsilon", "E_r", "achieved", "rhs", "vacuous",
    ])
    .map_err(err)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        w.write_record([
            r.t.to_string(),
            format_f64(r.psi),
            format_f64(r.psi_min),
            format_f64(r.epsilon),
            format_f64(r.e_r),
            opt(r.achieved),
            opt(r.rhs),
            r.vacuous.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of ASCII fields"))
}

/// `sweep`: tabulate the tradeoff. CLI arguments override `sweep.*` keys.
pub fn sweep(
    config_path: &Path,
    t_spec: Option<&str>,
    psi: Option<PsiConfig>,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let exp = load(config_path)?;
    let spec = t_spec
        .map(str::to_string)
        .or_else(|| exp.config.sweep.t.clone())
        .ok_or_else(|| CliError::Usage("no T values: pass --T or set sweep.T".into()))?;
    let t_values = parse_t_values(&spec).map_err(|e| CliError::field("sweep.T", e))?;
    let psi = psi.or(exp.config.sweep.psi).unwrap_or(exp.config.psi);
    let rows = sweep_rows(&exp, &t_values, psi)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| exp.output_dir().join(&exp.config.outputs.sweep));
    write_text(&path, &sweep_csv(&rows)?)?;
    let aborted = rows.iter().filter(|r| r.achieved.is_none()).count();
    println!(
        "{} sweep points written to {} ({aborted} aborted)",
        rows.len(),
        path.display()
    );
    Ok(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Greedy,
    Optimum,
    Perturbed,
}

#[derive(Serialize)]
struct BaselineOutput {
    which: &'static str,
    selected: Vec<usize>,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gains: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    taus: Option<Vec<f64>>,
}

fn greedy_output(which: &'static str, g: GreedyResult, taus: Option<Vec<f64>>) -> BaselineOutput {
    BaselineOutput {
        which,
        selected: ids(g.selected.iter().copied()),
        value: g.value(),
        values: Some(g.values),
        gains: Some(g.gains),
        taus,
    }
}

fn baseline_error(e: BaselineError) -> CliError {
    match e {
        BaselineError::TauCount { .. } | BaselineError::BadTau { .. } => {
            CliError::field("baseline.taus", e)
        }
        BaselineError::OverCap { .. } => CliError::Usage(e.to_string()),
    }
}

/// `baseline`: centralized references on the average objective.
pub fn baseline(
    config_path: &Path,
    which: BaselineKind,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let exp = load(config_path)?;
    let f = exp.run.objective();
    let k = exp.run.k;
    let output = match which {
        BaselineKind::Greedy => greedy_output("greedy", centralized_greedy(&f, k), None),
        BaselineKind::Optimum => {
            let o = brute_force_optimum(&f, k).map_err(baseline_error)?;
            BaselineOutput {
                which: "optimum",
                selected: ids(o.set.iter()),
                value: o.value,
                values: None,
                gains: None,
                taus: None,
            }
        }
        BaselineKind::Perturbed => {
            let taus = exp
                .config
                .baseline
                .taus
                .clone()
                .unwrap_or_else(|| vec![0.0; k]);
            let seed = derive_seed(exp.config.seed, "perturbed", 0);
            let g = perturbed_greedy(&f, k, &taus, seed).map_err(baseline_error)?;
            greedy_output("perturbed", g, Some(taus))
        }
    };
    let text = json::to_string(&output);
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

#[derive(Serialize)]
pub struct ReplayReport {
    pub notes: Vec<String>,
    pub audits_pass: bool,
    pub bounds: BoundsReport,
}

/// Audit a recorded trace against a config without re-simulating.
///
/// Sizes that disagree are a dimension error. Parameters that only change
/// the audited run (ψ, slack, intersection rule) are checked against the
/// trace header and any disagreement is listed in `notes`.
pub fn replay_report(trace_path: &Path, config_path: &Path) -> Result<ReplayReport, CliError> {
    let exp = load(config_path)?;
    let trace = read_trace(trace_path)?;
    let (h, c) = (&trace.header, exp.run.header());
    let sizes = [
        ("n", h.n, c.n),
        ("ground", h.ground, c.ground),
        ("K", h.k, c.k),
        ("T", h.t, c.t),
        ("T_prime", h.t_prime, c.t_prime),
        ("diameter", h.diameter, c.diameter),
    ];
    for (name, a, b) in sizes {
        if a != b {
            return Err(CliError::Dimension(format!(
                "{name}: trace {a}, config {b}"
            )));
        }
    }
    let mut notes = Vec::new();
    if h.intersection != c.intersection {
        notes.push(format!(
            "strict_paper_intersection mismatch: trace ran with {}, config requests {}",
            h.intersection, c.intersection
        ));
    }
    for (name, a, b) in [
        ("psi", h.psi, c.psi),
        ("mu", h.mu, c.mu),
        ("F_h", h.f_h, c.f_h),
        ("threshold_slack", h.threshold_slack, c.threshold_slack),
    ] {
        if a.to_bits() != b.to_bits() {
            notes.push(format!(
                "{name} mismatch: trace {}, config {}",
                format_f64(a),
                format_f64(b)
            ));
        }
    }
    let recomputed = exp.run.objective().eval(trace.selected_set());
    if recomputed.to_bits() != trace.value.to_bits() {
        notes.push(format!(
            "recorded value {} but the config objective gives {}",
            format_f64(trace.value),
            format_f64(recomputed)
        ));
    }
    let opt = optimum(&exp).map(|o| o.value);
    let (bounds, audits_pass) = report_for(&exp, &trace, opt)?;
    Ok(ReplayReport {
        notes,
        audits_pass,
        bounds,
    })
}

/// `replay`: print the audit report of a recorded trace.
pub fn replay(trace_path: &Path, config_path: &Path) -> Result<u8, CliError> {
    let report = replay_report(trace_path, config_path)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    print!("{}", json::to_string(&report));
    Ok(if report.audits_pass { 0 } else { 1 })
}

/// `analyze`: like `replay`, but writes the bounds JSON to a file.
pub fn analyze(trace_path: &Path, config_path: &Path, out: &Path) -> Result<u8, CliError> {
    let report = replay_report(trace_path, config_path)?;
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    write_text(out, &json::to_string(&report.bounds))?;
    println!("wrote {}", out.display());
    if report.audits_pass {
        Ok(0)
    } else {
        print_failures(&report.bounds, true);
        Ok(1)
    }
}

/// `validate-config`: resolve the config and describe the run it defines.
pub fn validate_config(config_path: &Path) -> Result<u8, CliError> {
    let exp = load(config_path)?;
    let h = exp.run.header();
    println!(
        "{}: ok ({}, n = {}, |V| = {}, K = {}, T = {}, T' = {}, psi = {}, mu = {}, F_h = {}, {})",
        exp.config.scenario,
        exp.config.graph.describe(),
        h.n,
        h.ground,
        h.k,
        h.t,
        h.t_prime,
        h.psi,
        h.mu,
        h.f_h,
        h.intersection
    );
    Ok(0)
}
