//! The distributed greedy protocol as a synchronous-round simulation.
//!
//! Each of the `K` rounds has three phases, all driven by a global clock:
//!
//! 1. **consensus** (`t = 0..T`): every agent starts from its local marginal
//!    gains `x_i^0` and repeatedly replaces its vector with the `W`-weighted
//!    average of its own and its neighbors' previous vectors;
//! 2. **thresholding** (`t = T+1`): each agent keeps the elements within `ψ`
//!    of its own maximum;
//! 3. **intersection** (`t = T+1..T'`): each agent intersects candidate sets
//!    with its neighbors for `d(G)` steps, after which all sets agree and the
//!    lowest-index survivor is appended to the selection.
//!
//! Within a step every agent reads only the previous-step state of itself
//! and its neighbors. All arithmetic is sequential in a fixed order, so a run
//! is bit-for-bit reproducible.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis;
use crate::graph::{self, Network};
use crate::mixing::{validate_mixing, MixingMatrix};
use crate::setfn::{LocalFamily, SetFunction};
use crate::subset::{Element, Subset};

/// How agents combine candidate sets during the intersection phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionRule {
    /// `S_i ← ∩_{j ∈ N_i ∪ {i}} S_j`.
    #[default]
    SelfInclusive,
    /// `S_i ← ∩_{j ∈ N_i} S_j`, the agent's own set excluded.
    StrictNeighbors,
}

impl fmt::Display for IntersectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntersectionRule::SelfInclusive => "self_inclusive",
            IntersectionRule::StrictNeighbors => "strict_neighbors",
        })
    }
}

impl std::str::FromStr for IntersectionRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self_inclusive" => Ok(IntersectionRule::SelfInclusive),
            "strict_neighbors" => Ok(IntersectionRule::StrictNeighbors),
            other => Err(format!("unknown intersection rule `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PsiChoice {
    /// `ψ = 4√n μ^T F_h`, the smallest admissible threshold.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{what} disagree on the agent count: {a} vs {b}")]
    AgentCount {
        what: &'static str,
        a: usize,
        b: usize,
    },
    #[error("network: {0}")]
    Network(#[from] graph::GraphError),
    #[error("mixing matrix: {0}")]
    Mixing(String),
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
    #[error("T' = {given} but the protocol requires T' = T + 1 + d(G) = {required}")]
    TPrime { given: usize, required: usize },
    #[error("ψ = {psi} is below the admissible minimum 4√n μ^T F_h = {psi_min}")]
    PsiTooSmall { psi: f64, psi_min: f64 },
    #[error("ψ = {0} must be finite and nonnegative")]
    BadPsi(f64),
    #[error("threshold slack {0} must be finite and nonnegative")]
    BadSlack(f64),
    #[error("automatic ψ needs μ(W) < 1: {0}")]
    AutoPsi(String),
}

/// Fully resolved protocol parameters. Build with [`RunConfig::builder`].
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Cardinality constraint after clamping to `|V|`.
    pub k: usize,
    /// Consensus steps per round.
    pub t: usize,
    pub psi: f64,
    pub t_prime: usize,
    pub diameter: usize,
    pub network: Network,
    pub mixing: MixingMatrix,
    pub family: LocalFamily,
    /// Bound on local gains used in `ε(T)`: `F_h`, or `F'_h` when tight.
    pub f_h: f64,
    pub tight_f_h: bool,
    /// `ε(T) = √n μ^T F_h`; infinite when `W` violates `μ < 1`.
    pub epsilon_t: f64,
    pub intersection: IntersectionRule,
    /// Extra width added to `ψ` when thresholding, to absorb rounding.
    pub threshold_slack: f64,
}

pub struct RunConfigBuilder {
    network: Network,
    mixing: MixingMatrix,
    family: LocalFamily,
    k: usize,
    t: usize,
    psi: PsiChoice,
    t_prime: Option<usize>,
    intersection: IntersectionRule,
    threshold_slack: f64,
    tight_f_h: bool,
    strict_psi: bool,
    require_valid_mixing: bool,
}

impl RunConfigBuilder {
    pub fn k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn t(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    pub fn psi(mut self, psi: PsiChoice) -> Self {
        self.psi = psi;
        self
    }

    /// Explicit `T'`; must equal `T + 1 + d(G)`.
    pub fn t_prime(mut self, t_prime: Option<usize>) -> Self {
        self.t_prime = t_prime;
        self
    }

    pub fn intersection(mut self, rule: IntersectionRule) -> Self {
        self.intersection = rule;
        self
    }

    pub fn threshold_slack(mut self, slack: f64) -> Self {
        self.threshold_slack = slack;
        self
    }

    pub fn tight_f_h(mut self, tight: bool) -> Self {
        self.tight_f_h = tight;
        self
    }

    /// Reject fixed `ψ` below `4ε(T)` (default on).
    pub fn strict_psi(mut self, strict: bool) -> Self {
        self.strict_psi = strict;
        self
    }

    /// Reject mixing matrices failing validation on the network (default on).
    pub fn require_valid_mixing(mut self, require: bool) -> Self {
        self.require_valid_mixing = require;
        self
    }

    pub fn build(self) -> Result<RunConfig, ConfigError> {
        let n = self.network.n();
        if self.mixing.n() != n {
            return Err(ConfigError::AgentCount {
                what: "network and mixing matrix",
                a: n,
                b: self.mixing.n(),
            });
        }
        if self.family.n() != n {
            return Err(ConfigError::AgentCount {
                what: "network and local functions",
                a: n,
                b: self.family.n(),
            });
        }
        if self.k == 0 {
            return Err(ConfigError::NonPositive("K"));
        }
        if self.t == 0 {
            return Err(ConfigError::NonPositive("T"));
        }
        self.network.ensure_connected()?;
        let diameter = graph::diameter(&self.network)?;
        let required = self.t + 1 + diameter;
        if let Some(given) = self.t_prime {
            if given != required {
                return Err(ConfigError::TPrime { given, required });
            }
        }
        if self.require_valid_mixing {
            let report = validate_mixing(self.mixing.matrix(), &self.network)
                .map_err(|e| ConfigError::Mixing(e.to_string()))?;
            if !report.passes() {
                return Err(ConfigError::Mixing(report.failures.join("; ")));
            }
        }
        if !(self.threshold_slack >= 0.0 && self.threshold_slack.is_finite()) {
            return Err(ConfigError::BadSlack(self.threshold_slack));
        }

        let m = self.family.ground().len();
        let k = if self.k > m {
            log::warn!("K = {} exceeds |V| = {m}; clamping to {m}", self.k);
            m
        } else {
            self.k
        };
        let f_h = if self.tight_f_h {
            self.family.f_h_tight
        } else {
            self.family.f_h
        };
        let epsilon = analysis::epsilon(n, self.mixing.mu(), self.t, f_h);
        let psi = match self.psi {
            PsiChoice::Auto => {
                let eps = epsilon
                    .as_ref()
                    .map_err(|e| ConfigError::AutoPsi(e.to_string()))?;
                4.0 * eps
            }
            PsiChoice::Fixed(psi) => {
                if !(psi >= 0.0 && psi.is_finite()) {
                    return Err(ConfigError::BadPsi(psi));
                }
                if self.strict_psi {
                    if let Ok(eps) = epsilon {
                        let psi_min = 4.0 * eps;
                        if psi < psi_min {
                            return Err(ConfigError::PsiTooSmall { psi, psi_min });
                        }
                    }
                }
                psi
            }
        };
        Ok(RunConfig {
            k,
            t: self.t,
            psi,
            t_prime: required,
            diameter,
            network: self.network,
            mixing: self.mixing,
            family: self.family,
            f_h,
            tight_f_h: self.tight_f_h,
            epsilon_t: epsilon.unwrap_or(f64::INFINITY),
            intersection: self.intersection,
            threshold_slack: self.threshold_slack,
        })
    }
}

impl RunConfig {
    /// Defaults: `K = 1`, `T = 1`, automatic `ψ`, self-inclusive intersection,
    /// no slack, `F_h = max_i f_i(V)`.
    pub fn builder(
        network: Network,
        mixing: MixingMatrix,
        family: LocalFamily,
    ) -> RunConfigBuilder {
        RunConfigBuilder {
            network,
            mixing,
            family,
            k: 1,
            t: 1,
            psi: PsiChoice::Auto,
            t_prime: None,
            intersection: IntersectionRule::default(),
            threshold_slack: 0.0,
            tight_f_h: false,
            strict_psi: true,
            require_valid_mixing: true,
        }
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    /// The same instance with a different `T` and `ψ`. A fixed `ψ` is not
    /// required to dominate the new `4ε(T)`.
    pub fn with_t(&self, t: usize, psi: PsiChoice) -> Result<RunConfig, ConfigError> {
        RunConfig::builder(
            self.network.clone(),
            self.mixing.clone(),
            self.family.clone(),
        )
        .k(self.k)
        .t(t)
        .psi(psi)
        .intersection(self.intersection)
        .threshold_slack(self.threshold_slack)
        .tight_f_h(self.tight_f_h)
        .strict_psi(false)
        .require_valid_mixing(false)
        .build()
    }

    pub fn ground_size(&self) -> usize {
        self.family.ground().len()
    }

    /// The global objective `f = (1/n) Σ f_i`.
    pub fn objective(&self) -> SetFunction {
        self.family.average()
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            n: self.n(),
            ground: self.ground_size(),
            k: self.k,
            t: self.t,
            t_prime: self.t_prime,
            diameter: self.diameter,
            psi: self.psi,
            mu: self.mixing.mu(),
            f_h: self.f_h,
            epsilon_t: self.epsilon_t,
            intersection: self.intersection,
            threshold_slack: self.threshold_slack,
        }
    }
}

/// Values indexed by the remaining elements `V_k`, in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementVector {
    pub elements: Vec<Element>,
    pub values: Vec<f64>,
}

impl ElementVector {
    pub fn get(&self, e: Element) -> Option<f64> {
        self.elements
            .iter()
            .position(|&x| x == e)
            .map(|i| self.values[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub x: ElementVector,
    pub candidates: Subset,
    pub selected: Vec<Element>,
}

impl AgentState {
    pub fn new(id: usize) -> AgentState {
        AgentState {
            id,
            x: ElementVector {
                elements: Vec::new(),
                values: Vec::new(),
            },
            candidates: Subset::EMPTY,
            selected: Vec::new(),
        }
    }

    pub fn selected_set(&self) -> Subset {
        self.selected.iter().copied().collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("agents disagree: {0}")]
    Desync(String),
    #[error("agent {agent}: negative local gain {gain} for {element}; f_{agent} is not monotone")]
    MonotonicityViolation {
        agent: usize,
        element: Element,
        gain: f64,
    },
    #[error("agent {agent} ended the intersection phase with no candidates; ψ is below the admissible threshold")]
    InfeasiblePsi { agent: usize },
    #[error("{got} local functions for {agents} agents")]
    LocalCount { got: usize, agents: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("round {round}, t = {t}: {source}")]
    Phase {
        round: usize,
        t: usize,
        source: PhaseError,
    },
}

/// Compute `x_i^0` for every agent from `f_i` and the shared selection.
/// Agents are 0-based and matched to `locals` by position.
pub fn init_round(agents: &mut [AgentState], locals: &[SetFunction]) -> Result<(), PhaseError> {
    if agents.len() != locals.len() {
        return Err(PhaseError::LocalCount {
            got: locals.len(),
            agents: agents.len(),
        });
    }
    let Some(first) = agents.first() else {
        return Ok(());
    };
    let selected = first.selected_set();
    if let Some(a) = agents.iter().find(|a| a.selected_set() != selected) {
        return Err(PhaseError::Desync(format!(
            "agent {} holds selection {:?}, agent {} holds {:?}",
            first.id + 1,
            selected,
            a.id + 1,
            a.selected_set()
        )));
    }
    let remaining: Vec<Element> = locals[0]
        .ground()
        .full()
        .difference(selected)
        .iter()
        .collect();
    for (agent, f) in agents.iter_mut().zip(locals) {
        let base = f.eval(selected);
        let mut values = Vec::with_capacity(remaining.len());
        for &v in &remaining {
            let gain = f.eval(selected.with(v)) - base;
            if gain < 0.0 {
                return Err(PhaseError::MonotonicityViolation {
                    agent: agent.id + 1,
                    element: v,
                    gain,
                });
            }
            values.push(gain);
        }
        agent.x = ElementVector {
            elements: remaining.clone(),
            values,
        };
        agent.candidates = Subset::EMPTY;
    }
    Ok(())
}

/// One synchronous consensus update `x_i ← w_ii x_i + Σ_{j∈N_i} w_ij x_j`.
///
/// The sum runs over `N_i ∪ {i}` in ascending agent order.
pub fn consensus_step(
    agents: &mut [AgentState],
    w: &MixingMatrix,
    g: &Network,
) -> Result<(), PhaseError> {
    let Some(first) = agents.first() else {
        return Ok(());
    };
    let index = &first.x.elements;
    if let Some(a) = agents.iter().find(|a| &a.x.elements != index) {
        return Err(PhaseError::Desync(format!(
            "agent {} holds x over {:?}, agent {} over {:?}",
            first.id + 1,
            first.x.elements,
            a.id + 1,
            a.x.elements
        )));
    }
    let len = index.len();
    let next: Vec<Vec<f64>> = (0..agents.len())
        .map(|i| {
            let mut acc = vec![0.0; len];
            let mut add = |j: usize| {
                let wij = w.weight(i, j);
                for (a, x) in acc.iter_mut().zip(&agents[j].x.values) {
                    *a += wij * x;
                }
            };
            let mut self_done = false;
            for &j in g.neighbors(i) {
                if !self_done && j > i {
                    add(i);
                    self_done = true;
                }
                add(j);
            }
            if !self_done {
                add(i);
            }
            acc
        })
        .collect();
    for (agent, values) in agents.iter_mut().zip(next) {
        agent.x.values = values;
    }
    Ok(())
}

/// Lowest-index maximizer of `x_i` and the candidate set
/// `{v : x_v ≥ max − ψ − slack}`.
pub fn threshold_candidates(state: &AgentState, psi: f64, slack: f64) -> (Element, Subset) {
    let mut best: Option<(Element, f64)> = None;
    for (&e, &v) in state.x.elements.iter().zip(&state.x.values) {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((e, v));
        }
    }
    let (arg, max) = best.expect("thresholding needs at least one remaining element");
    let cut = max - psi - slack;
    let set = state
        .x
        .elements
        .iter()
        .zip(&state.x.values)
        .filter(|(_, &v)| v >= cut)
        .map(|(&e, _)| e)
        .collect();
    (arg, set)
}

/// One synchronous intersection update.
pub fn intersection_step(agents: &mut [AgentState], g: &Network, rule: IntersectionRule) {
    let next: Vec<Subset> = (0..agents.len())
        .map(|i| {
            let neighbors = g.neighbors(i);
            let start = match rule {
                IntersectionRule::SelfInclusive => agents[i].candidates,
                // an isolated agent has nothing to intersect with and keeps its set
                IntersectionRule::StrictNeighbors if neighbors.is_empty() => agents[i].candidates,
                IntersectionRule::StrictNeighbors => Subset::full(64),
            };
            neighbors
                .iter()
                .fold(start, |acc, &j| acc.intersection(agents[j].candidates))
        })
        .collect();
    for (agent, s) in agents.iter_mut().zip(next) {
        agent.candidates = s;
    }
}

/// Append `v_{j_min}`, the lowest-index common candidate, at every agent.
pub fn select_and_append(agents: &mut [AgentState]) -> Result<Element, PhaseError> {
    let Some(first) = agents.first() else {
        return Err(PhaseError::Desync("no agents".into()));
    };
    let common = first.candidates;
    if let Some(a) = agents.iter().find(|a| a.candidates.is_empty()) {
        return Err(PhaseError::InfeasiblePsi { agent: a.id + 1 });
    }
    if let Some(a) = agents.iter().find(|a| a.candidates != common) {
        return Err(PhaseError::Desync(format!(
            "candidate sets differ at T': agent {} has {:?}, agent {} has {:?}",
            first.id + 1,
            common,
            a.id + 1,
            a.candidates
        )));
    }
    let chosen = common.min_element().expect("nonempty candidate set");
    for a in agents.iter_mut() {
        a.selected.push(chosen);
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub n: usize,
    pub ground: usize,
    pub k: usize,
    pub t: usize,
    pub t_prime: usize,
    pub diameter: usize,
    pub psi: f64,
    pub mu: f64,
    pub f_h: f64,
    pub epsilon_t: f64,
    pub intersection: IntersectionRule,
    pub threshold_slack: f64,
}

/// Everything one round recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// `V_k`, ascending.
    pub elements: Vec<Element>,
    /// `x[t][agent][idx]` for `t = 0..=T`.
    pub x: Vec<Vec<Vec<f64>>>,
    /// `v_{i*}` at `t = T` per agent.
    pub argmax: Vec<Element>,
    /// `candidates[s][agent]` is `S_i^{T+1+s}`, for `t = T+1..=T'`.
    pub candidates: Vec<Vec<Subset>>,
    pub chosen: Element,
}

impl RoundTrace {
    /// `(1/n) Σ_j x_{j,v}^0` per element: the average marginal gain the
    /// consensus phase estimates.
    pub fn targets(&self) -> Vec<f64> {
        let x0 = &self.x[0];
        let n = x0.len() as f64;
        (0..self.elements.len())
            .map(|v| x0.iter().map(|row| row[v]).sum::<f64>() / n)
            .collect()
    }

    /// `δ_k(t)` for `t = 0..=T`.
    pub fn delta(&self) -> Vec<f64> {
        let targets = self.targets();
        self.x
            .iter()
            .map(|snapshot| {
                snapshot
                    .iter()
                    .flat_map(|row| row.iter().zip(&targets).map(|(x, m)| (x - m).abs()))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn index_of(&self, e: Element) -> Option<usize> {
        self.elements.iter().position(|&x| x == e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub rounds: Vec<RoundTrace>,
    /// `S̄^K` in selection order.
    pub selected: Vec<Element>,
    /// `f(S̄^K)` for the global objective.
    pub value: f64,
}

impl RunTrace {
    pub fn selected_set(&self) -> Subset {
        self.selected.iter().copied().collect()
    }
}

/// Run all `K` rounds and record the full trace.
pub fn run(config: &RunConfig) -> Result<RunTrace, RunError> {
    let n = config.n();
    let locals = &config.family.locals;
    let mut agents: Vec<AgentState> = (0..n).map(AgentState::new).collect();
    let mut rounds = Vec::with_capacity(config.k);
    let phase =
        |round: usize, t: usize| move |source: PhaseError| RunError::Phase { round, t, source };

    for round in 0..config.k {
        init_round(&mut agents, locals).map_err(phase(round, 0))?;
        let elements = agents[0].x.elements.clone();
        let mut x = Vec::with_capacity(config.t + 1);
        x.push(
            agents
                .iter()
                .map(|a| a.x.values.clone())
                .collect::<Vec<_>>(),
        );
        for t in 0..config.t {
            consensus_step(&mut agents, &config.mixing, &config.network)
                .map_err(phase(round, t + 1))?;
            x.push(agents.iter().map(|a| a.x.values.clone()).collect());
        }

        let mut argmax = Vec::with_capacity(n);
        for agent in agents.iter_mut() {
            let (arg, set) = threshold_candidates(agent, config.psi, config.threshold_slack);
            agent.candidates = set;
            argmax.push(arg);
        }
        let mut candidates = vec![agents.iter().map(|a| a.candidates).collect::<Vec<_>>()];
        for _ in config.t + 1..config.t_prime {
            intersection_step(&mut agents, &config.network, config.intersection);
            candidates.push(agents.iter().map(|a| a.candidates).collect());
        }
        let chosen = select_and_append(&mut agents).map_err(phase(round, config.t_prime))?;
        log::debug!("round {round}: chose {chosen}");
        rounds.push(RoundTrace {
            round,
            elements,
            x,
            argmax,
            candidates,
            chosen,
        });
    }

    let selected = agents[0].selected.clone();
    if let Some(a) = agents.iter().find(|a| a.selected != selected) {
        return Err(RunError::Phase {
            round: config.k,
            t: 0,
            source: PhaseError::Desync(format!(
                "agent {} finished with {:?}",
                a.id + 1,
                a.selected
            )),
        });
    }
    let value = config.objective().eval(selected.iter().copied().collect());
    Ok(RunTrace {
        header: config.header(),
        rounds,
        selected,
        value,
    })
}
