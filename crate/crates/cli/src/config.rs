//! Experiment configuration: JSON schema, validation and resolution into a
//! [`RunConfig`].

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use dgreedy::graph::{generate, GraphKind, Network};
use dgreedy::mixing::{
    lazy_metropolis_weights, metropolis_weights, read_matrix_csv, uniform_complete_weights,
    MixingMatrix,
};
use dgreedy::protocol::{ConfigError, IntersectionRule, PsiChoice, RunConfig};
use dgreedy::seeding::derive_seed;
use dgreedy::setfn::{build_test_function, local_family, FunctionSpec, LocalFamily};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Drives graph, function and perturbed-greedy randomness through
    /// independent derived streams.
    #[serde(default)]
    pub seed: u64,
    pub graph: GraphConfig,
    #[serde(default)]
    pub mixing: MixingConfig,
    /// One spec for every agent; random data is drawn per agent.
    #[serde(default)]
    pub functions: Option<FunctionSpec>,
    /// One spec per agent.
    #[serde(default)]
    pub locals: Option<Vec<FunctionSpec>>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub psi: PsiConfig,
    #[serde(rename = "T_prime", default)]
    pub t_prime: Option<usize>,
    #[serde(default)]
    pub strict_paper_intersection: bool,
    #[serde(rename = "tight_Fh", default)]
    pub tight_fh: bool,
    /// Extra tolerance on the threshold test so that values equal up to
    /// floating-point rounding land in the same candidate set.
    #[serde(default = "default_slack")]
    pub threshold_slack: f64,
    #[serde(default = "yes")]
    pub strict_psi: bool,
    #[serde(default = "yes")]
    pub require_valid_mixing: bool,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub audits: AuditConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_THRESHOLD_SLACK: f64 = 1e-12;

fn default_slack() -> f64 {
    DEFAULT_THRESHOLD_SLACK
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphName {
    Path,
    Cycle,
    Complete,
    Grid,
    ErdosRenyi,
    Edges,
}

/// Graph family and size. `rows` applies to `grid`, `p` to `erdos_renyi`
/// and `edges` (1-based agent ids) to `edges`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphName,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

impl GraphConfig {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn describe(&self) -> String {
        let n = self.n;
        match self.kind {
            GraphName::Path => format!("path({n})"),
            GraphName::Cycle => format!("cycle({n})"),
            GraphName::Complete => format!("complete({n})"),
            GraphName::Grid => match self.rows {
                Some(r) => format!("grid({n}, rows = {r})"),
                None => format!("grid({n})"),
            },
            GraphName::ErdosRenyi => format!("erdos_renyi({n}, {})", self.p.unwrap_or(f64::NAN)),
            GraphName::Edges => format!(
                "edges({n}, {} edges)",
                self.edges.as_ref().map_or(0, Vec::len)
            ),
        }
    }

    fn check_keys(&self) -> Result<(), CliError> {
        let allowed: &[&str] = match self.kind {
            GraphName::Grid => &["rows"],
            GraphName::ErdosRenyi => &["p"],
            GraphName::Edges => &["edges"],
            _ => &[],
        };
        let present = [
            ("rows", self.rows.is_some()),
            ("p", self.p.is_some()),
            ("edges", self.edges.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(CliError::field(
                    format!("graph.{key}"),
                    format!("not used by kind {:?}", self.kind),
                ));
            }
        }
        Ok(())
    }

    fn build(&self, seed: u64) -> Result<Network, CliError> {
        self.check_keys()?;
        let n = self.n;
        let kind = match self.kind {
            GraphName::Path => GraphKind::Path,
            GraphName::Cycle => GraphKind::Cycle,
            GraphName::Complete => GraphKind::Complete,
            GraphName::Grid => GraphKind::Grid { rows: self.rows },
            GraphName::ErdosRenyi => {
                let p = self
                    .p
                    .ok_or_else(|| CliError::field("graph.p", "required for erdos_renyi"))?;
                GraphKind::ErdosRenyi { p }
            }
            GraphName::Edges => {
                let edges = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| CliError::field("graph.edges", "required for kind edges"))?;
                let mut zero = Vec::with_capacity(edges.len());
                for (i, &[a, b]) in edges.iter().enumerate() {
                    if a == 0 || b == 0 {
                        return Err(CliError::field(
                            format!("graph.edges[{i}]"),
                            "agent ids are 1-based",
                        ));
                    }
                    zero.push((a - 1, b - 1));
                }
                return Network::from_edges(n, zero).map_err(|e| CliError::field("graph.edges", e));
            }
        };
        generate(kind, n, seed).map_err(|e| CliError::field("graph", e))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MixingConfig {
    #[default]
    Metropolis,
    /// `(I + W_metropolis) / 2`.
    Lazy,
    /// `W = (1/n) 11'`; complete graphs only.
    Uniform,
    /// Square CSV without header, resolved relative to the config file.
    CustomCsv(PathBuf),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PsiRepr", into = "PsiRepr")]
pub enum PsiConfig {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PsiRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<PsiRepr> for PsiConfig {
    type Error = String;
    fn try_from(r: PsiRepr) -> Result<Self, Self::Error> {
        match r {
            PsiRepr::Number(x) => Ok(PsiConfig::Fixed(x)),
            PsiRepr::Word(w) if w == "auto" => Ok(PsiConfig::Auto),
            PsiRepr::Word(w) => Err(format!("expected \"auto\" or a number, got \"{w}\"")),
        }
    }
}

impl From<PsiConfig> for PsiRepr {
    fn from(p: PsiConfig) -> Self {
        match p {
            PsiConfig::Auto => PsiRepr::Word("auto".into()),
            PsiConfig::Fixed(x) => PsiRepr::Number(x),
        }
    }
}

impl std::str::FromStr for PsiConfig {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(PsiConfig::Auto);
        }
        s.parse::<f64>()
            .map(PsiConfig::Fixed)
            .map_err(|_| format!("expected `auto` or a number, got `{s}`"))
    }
}

impl From<PsiConfig> for PsiChoice {
    fn from(p: PsiConfig) -> Self {
        match p {
            PsiConfig::Auto => PsiChoice::Auto,
            PsiConfig::Fixed(x) => PsiChoice::Fixed(x),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Per-step errors for perturbed greedy; zeros when absent.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `a:b` (inclusive) or a comma list.
    #[serde(rename = "T", default)]
    pub t: Option<String>,
    /// Defaults to the run's `psi`.
    #[serde(default)]
    pub psi: Option<PsiConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "yes")]
    pub lemmas: bool,
    #[serde(default = "yes")]
    pub theorem1: bool,
    #[serde(default)]
    pub corollary1: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            lemmas: true,
            theorem1: true,
            corollary1: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Defaults to `out/<scenario>`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "OutputConfig::default_trace")]
    pub trace: String,
    #[serde(default = "OutputConfig::default_summary")]
    pub summary: String,
    #[serde(default = "OutputConfig::default_bounds")]
    pub bounds: String,
    #[serde(default = "OutputConfig::default_sweep")]
    pub sweep: String,
}

impl OutputConfig {
    fn default_trace() -> String {
        "trace.csv".into()
    }
    fn default_summary() -> String {
        "summary.json".into()
    }
    fn default_bounds() -> String {
        "bounds.json".into()
    }
    fn default_sweep() -> String {
        "sweep.csv".into()
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            trace: Self::default_trace(),
            summary: Self::default_summary(),
            bounds: Self::default_bounds(),
            sweep: Self::default_sweep(),
        }
    }
}

/// Parse `a:b` (inclusive) or `a,b,c`.
pub fn parse_t_values(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("expected `a:b` or a comma list of positive integers, got `{s}`");
    let values: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

/// A parsed config together with the directory relative paths resolve from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::ConfigField {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse_config(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

/// Everything a run needs, with randomness already drawn.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub run: RunConfig,
}

impl Experiment {
    pub fn psi_choice(&self) -> PsiChoice {
        self.config.psi.into()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.config
            .outputs
            .dir
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&self.config.scenario))
    }
}

fn config_error_path(e: &ConfigError) -> &'static str {
    match e {
        ConfigError::AgentCount { .. } => "locals",
        ConfigError::Network(_) => "graph",
        ConfigError::Mixing(_) => "mixing",
        ConfigError::NonPositive("K") => "K",
        ConfigError::NonPositive(_) => "T",
        ConfigError::TPrime { .. } => "T_prime",
        ConfigError::PsiTooSmall { .. } | ConfigError::BadPsi(_) | ConfigError::AutoPsi(_) => "psi",
        ConfigError::BadSlack(_) => "threshold_slack",
    }
}

fn build_family(config: &ExperimentConfig, n: usize) -> Result<LocalFamily, CliError> {
    let seed = derive_seed(config.seed, "functions", 0);
    match (&config.functions, &config.locals) {
        (Some(spec), None) => {
            local_family(n, spec, seed).map_err(|e| CliError::field("functions", e))
        }
        (None, Some(specs)) => {
            if specs.len() != n {
                return Err(CliError::field(
                    "locals",
                    format!("{} local functions for {n} agents", specs.len()),
                ));
            }
            let locals = specs
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    let s = spec
                        .seed
                        .unwrap_or_else(|| derive_seed(seed, "locals", i as u64));
                    build_test_function(spec, s)
                        .map_err(|e| CliError::field(format!("locals[{i}]"), e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            LocalFamily::from_locals(locals).map_err(|e| CliError::field("locals", e))
        }
        (Some(_), Some(_)) => Err(CliError::field(
            "functions",
            "give either `functions` or `locals`, not both",
        )),
        (None, None) => Err(CliError::field(
            "functions",
            "one of `functions` or `locals` is required",
        )),
    }
}

fn build_mixing(loaded: &LoadedConfig, g: &Network) -> Result<MixingMatrix, CliError> {
    let config = &loaded.config;
    let built = match &config.mixing {
        MixingConfig::Metropolis => metropolis_weights(g),
        MixingConfig::Lazy => lazy_metropolis_weights(g),
        MixingConfig::Uniform => {
            if g.edge_count() != g.n() * (g.n() - 1) / 2 {
                return Err(CliError::field(
                    "mixing",
                    "uniform weights need a complete graph",
                ));
            }
            uniform_complete_weights(g.n())
        }
        MixingConfig::CustomCsv(path) => {
            let full = loaded.base_dir.join(path);
            let file = fs::File::open(&full).map_err(|e| CliError::io(&full, e))?;
            let w = read_matrix_csv(BufReader::new(file))
                .map_err(|e| CliError::field("mixing.custom_csv", e))?;
            if w.nrows() != g.n() {
                return Err(CliError::Dimension(format!(
                    "{} has {} rows for {} agents",
                    full.display(),
                    w.nrows(),
                    g.n()
                )));
            }
            if config.require_valid_mixing {
                MixingMatrix::custom(w, g)
            } else {
                Ok(MixingMatrix::unchecked(w))
            }
        }
    };
    built.map_err(|e| CliError::field("mixing", e))
}

/// Validate and resolve a config. Graph and function data are drawn from
/// independent streams derived from `seed`.
pub fn resolve(loaded: &LoadedConfig) -> Result<Experiment, CliError> {
    let config = &loaded.config;
    if config.scenario.trim().is_empty() {
        return Err(CliError::field("scenario", "must not be empty"));
    }
    let n = config.graph.n();
    if n == 0 {
        return Err(CliError::field("graph.n", "must be at least 1"));
    }
    let g = config.graph.build(derive_seed(config.seed, "graph", 0))?;
    let w = build_mixing(loaded, &g)?;
    let family = build_family(config, n)?;
    if let Some(taus) = &config.baseline.taus {
        if taus.len() != config.k {
            return Err(CliError::field(
                "baseline.taus",
                format!("expected {} entries, got {}", config.k, taus.len()),
            ));
        }
    }
    if let Some(t) = &config.sweep.t {
        parse_t_values(t).map_err(|e| CliError::field("sweep.T", e))?;
    }
    let rule = if config.strict_paper_intersection {
        IntersectionRule::StrictNeighbors
    } else {
        IntersectionRule::SelfInclusive
    };
    let run = RunConfig::builder(g, w, family)
        .k(config.k)
        .t(config.t)
        .psi(config.psi.into())
        .t_prime(config.t_prime)
        .intersection(rule)
        .threshold_slack(config.threshold_slack)
        .tight_f_h(config.tight_fh)
        .strict_psi(config.strict_psi)
        .require_valid_mixing(config.require_valid_mixing)
        .build()
        .map_err(|e| CliError::field(config_error_path(&e), e))?;
    Ok(Experiment {
        config: config.clone(),
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": "t",
        "graph": {"kind": "path", "n": 3},
        "functions": {"kind": "coverage", "ground": 5},
        "K": 2, "T": 4
    }"#;

    fn loaded(text: &str) -> LoadedConfig {
        LoadedConfig {
            config: parse_config(text).unwrap(),
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn defaults_are_filled_in() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.psi, PsiConfig::Auto);
        assert_eq!(c.mixing, MixingConfig::Metropolis);
        assert!(c.strict_psi && c.require_valid_mixing && c.audits.lemmas && !c.audits.corollary1);
        assert_eq!(c.outputs.trace, "trace.csv");
        let e = resolve(&loaded(MINIMAL)).unwrap();
        assert_eq!(e.run.t_prime, 4 + 1 + 2);
        assert_eq!(e.output_dir(), Path::new("out/t"));
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let bad = MINIMAL.replace("\"T\": 4", "\"T\": 4, \"bogus\": 1");
        assert!(matches!(
            parse_config(&bad),
            Err(CliError::ConfigField { .. })
        ));

        let bad = MINIMAL.replace("\"n\": 3", "\"n\": \"three\"");
        let Err(CliError::ConfigField { path, .. }) = parse_config(&bad) else {
            panic!()
        };
        assert_eq!(path, "graph.n");

        let bad = MINIMAL.replace("\"T\": 4", "\"T\": 4, \"psi\": \"big\"");
        let Err(CliError::ConfigField { path, message }) = parse_config(&bad) else {
            panic!()
        };
        assert_eq!(path, "psi");
        assert!(message.contains("auto"));

        let bad = MINIMAL.replace("\"ground\": 5", "\"ground\": 5, \"colour\": 1");
        let Err(CliError::ConfigField { path, .. }) = parse_config(&bad) else {
            panic!()
        };
        assert!(path.starts_with("functions"), "{path}");
    }

    #[test]
    fn semantic_errors_carry_the_field_path() {
        let cases = [
            (
                MINIMAL.replace("\"T\": 4", "\"T\": 4, \"T_prime\": 9"),
                "T_prime",
            ),
            (MINIMAL.replace("\"K\": 2", "\"K\": 0"), "K"),
            (
                MINIMAL.replace("\"T\": 4", "\"T\": 4, \"psi\": 0.001"),
                "psi",
            ),
            (
                MINIMAL.replace("\"T\": 4", "\"T\": 4, \"mixing\": \"uniform\""),
                "mixing",
            ),
            (
                MINIMAL.replace("\"T\": 4", "\"T\": 4, \"baseline\": {\"taus\": [1]}"),
                "baseline.taus",
            ),
            (
                MINIMAL.replace("\"T\": 4", "\"T\": 4, \"sweep\": {\"T\": \"5:1\"}"),
                "sweep.T",
            ),
        ];
        for (text, expected) in cases {
            match resolve(&loaded(&text)) {
                Err(CliError::ConfigField { path, .. }) => assert_eq!(path, expected),
                other => panic!("{expected}: {other:?}"),
            }
        }
    }

    #[test]
    fn locals_must_match_the_agent_count() {
        let text = MINIMAL.replace(
            "\"functions\": {\"kind\": \"coverage\", \"ground\": 5}",
            "\"locals\": [{\"kind\": \"modular\", \"weights\": [1, 2]}, {\"kind\": \"modular\", \"weights\": [2, 1]}]",
        );
        let Err(CliError::ConfigField { path, .. }) = resolve(&loaded(&text)) else {
            panic!()
        };
        assert_eq!(path, "locals");
    }

    #[test]
    fn same_seed_same_instance() {
        let text = MINIMAL.replace(
            "\"path\", \"n\": 3",
            "\"erdos_renyi\", \"n\": 8, \"p\": 0.4",
        );
        let a = resolve(&loaded(&text)).unwrap();
        let b = resolve(&loaded(&text)).unwrap();
        assert_eq!(a.run.network, b.run.network);
        let s = Subset::full(5);
        assert_eq!(
            a.run.family.locals[3].eval(s),
            b.run.family.locals[3].eval(s)
        );
    }

    use dgreedy::Subset;

    #[test]
    fn t_value_syntax() {
        assert_eq!(parse_t_values("1:4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_t_values("2, 5,9").unwrap(), vec![2, 5, 9]);
        assert!(parse_t_values("0:3").is_err());
        assert!(parse_t_values("x").is_err());
    }
}
