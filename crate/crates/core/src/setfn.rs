//! Normalized monotone set functions over a shared ground set, exact structure
//! checks (monotonicity, submodularity, submodularity ratio) and the test
//! corpus used by the simulator.
//!
//! Every agent's local objective `f_i` is a [`SetFunction`] over the same
//! [`GroundSet`]; the global objective is their pointwise average, built with
//! [`SetFunction::average`].

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::subset::{Element, Subset, MAX_GROUND};

/// Default cap on `|V|` for the exhaustive structure checks.
pub const STRUCTURE_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetFnError {
    #[error("element {element} already belongs to the conditioning set {set:?}")]
    ElementInSet { element: Element, set: Subset },
    #[error("element {element} is outside the ground set of size {ground}")]
    OutOfGround { element: Element, ground: usize },
    #[error("exhaustive check refused: |V| = {size} exceeds the cap of {cap}")]
    OverCap { size: usize, cap: usize },
    #[error("invalid function parameters: {0}")]
    Config(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SetFnError> {
    Err(SetFnError::Config(msg.into()))
}

/// The ordered, index-stable ground set `V = {v1, ..., vm}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundSet {
    size: usize,
}

impl GroundSet {
    pub fn new(size: usize) -> Result<GroundSet, SetFnError> {
        if size == 0 || size > MAX_GROUND {
            return config_err(format!(
                "ground set size must be in 1..={MAX_GROUND}, got {size}"
            ));
        }
        Ok(GroundSet { size })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn full(&self) -> Subset {
        Subset::full(self.size)
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> {
        (0..self.size).map(Element)
    }
}

/// Families available in the test corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Coverage,
    WeightedCoverage,
    FacilityLocation,
    PairSupermodular,
    Modular,
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FunctionKind::Coverage => "coverage",
            FunctionKind::WeightedCoverage => "weighted_coverage",
            FunctionKind::FacilityLocation => "facility_location",
            FunctionKind::PairSupermodular => "pair_supermodular",
            FunctionKind::Modular => "modular",
        };
        f.write_str(s)
    }
}

enum Evaluator {
    /// `f(S) = Σ_{u ∈ ∪_{v∈S} cover(v)} weight(u)`; covers are bitsets over the universe.
    Coverage {
        covers: Vec<Vec<u64>>,
        weights: Vec<f64>,
    },
    /// `f(S) = Σ_c max_{v∈S} benefit[c][v]`, zero on the empty set.
    Facility {
        benefit: Vec<Vec<f64>>,
    },
    /// `f(S) = g(|S ∩ {a,b}|) + Σ_{v∈S} w_v`.
    Pair {
        pair: (Element, Element),
        g: [f64; 3],
        weights: Vec<f64>,
    },
    Modular {
        weights: Vec<f64>,
    },
    Table {
        values: Vec<f64>,
    },
    /// `Σ_i f_i(S) / n`.
    Average {
        parts: Vec<SetFunction>,
    },
}

impl Evaluator {
    fn eval(&self, s: Subset) -> f64 {
        match self {
            Evaluator::Coverage { covers, weights } => {
                let words = weights.len().div_ceil(64);
                let mut union = vec![0u64; words];
                for e in s.iter() {
                    for (w, c) in union.iter_mut().zip(&covers[e.0]) {
                        *w |= c;
                    }
                }
                let mut total = 0.0;
                for (wi, &word) in union.iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let b = bits.trailing_zeros() as usize;
                        total += weights[wi * 64 + b];
                        bits &= bits - 1;
                    }
                }
                total
            }
            Evaluator::Facility { benefit } => {
                if s.is_empty() {
                    return 0.0;
                }
                benefit
                    .iter()
                    .map(|row| s.iter().map(|e| row[e.0]).fold(f64::NEG_INFINITY, f64::max))
                    .sum()
            }
            Evaluator::Pair { pair, g, weights } => {
                let hits = usize::from(s.contains(pair.0)) + usize::from(s.contains(pair.1));
                g[hits] + s.iter().map(|e| weights[e.0]).sum::<f64>()
            }
            Evaluator::Modular { weights } => s.iter().map(|e| weights[e.0]).sum(),
            Evaluator::Table { values } => values[s.bits() as usize],
            Evaluator::Average { parts } => {
                parts.iter().map(|f| f.eval(s)).sum::<f64>() / parts.len() as f64
            }
        }
    }
}

/// A normalized set function with a per-subset memo.
///
/// Cloning is cheap and clones share the memo. Evaluation is thread-safe.
#[derive(Clone)]
pub struct SetFunction {
    ground: GroundSet,
    label: String,
    evaluator: Arc<Evaluator>,
    memo: Arc<RwLock<HashMap<u64, f64>>>,
}

impl fmt::Debug for SetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetFunction")
            .field("label", &self.label)
            .field("ground", &self.ground.len())
            .finish()
    }
}

impl SetFunction {
    fn from_evaluator(ground: GroundSet, label: impl Into<String>, evaluator: Evaluator) -> Self {
        SetFunction {
            ground,
            label: label.into(),
            evaluator: Arc::new(evaluator),
            memo: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    /// Coverage function. `sets[v]` lists the 1-based universe items covered
    /// by element `v`; `weights`, when given, assigns a weight to each item.
    pub fn coverage(
        universe: usize,
        sets: &[Vec<usize>],
        weights: Option<&[f64]>,
    ) -> Result<SetFunction, SetFnError> {
        let ground = GroundSet::new(sets.len())?;
        if universe == 0 {
            return config_err("coverage universe must be nonempty");
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != universe {
                    return config_err(format!(
                        "expected {universe} universe weights, got {}",
                        w.len()
                    ));
                }
                check_weights(w, "universe weight")?;
                w.to_vec()
            }
            None => vec![1.0; universe],
        };
        let words = universe.div_ceil(64);
        let mut covers = Vec::with_capacity(sets.len());
        for (v, items) in sets.iter().enumerate() {
            let mut bits = vec![0u64; words];
            for &item in items {
                if item == 0 || item > universe {
                    return config_err(format!(
                        "set of v{} names item {item} outside universe 1..={universe}",
                        v + 1
                    ));
                }
                let idx = item - 1;
                bits[idx / 64] |= 1u64 << (idx % 64);
            }
            covers.push(bits);
        }
        let label = if weights.iter().all(|&w| w == 1.0) {
            "coverage"
        } else {
            "weighted_coverage"
        };
        Ok(SetFunction::from_evaluator(
            ground,
            label,
            Evaluator::Coverage { covers, weights },
        ))
    }

    /// Facility location `f(S) = Σ_c max_{v∈S} benefit[c][v]` with rows per customer.
    pub fn facility_location(benefit: Vec<Vec<f64>>) -> Result<SetFunction, SetFnError> {
        let m = match benefit.first() {
            Some(row) => row.len(),
            None => return config_err("facility location needs at least one customer"),
        };
        let ground = GroundSet::new(m)?;
        for row in &benefit {
            if row.len() != m {
                return config_err("facility location benefit rows must all have |V| entries");
            }
            check_weights(row, "benefit")?;
        }
        Ok(SetFunction::from_evaluator(
            ground,
            "facility_location",
            Evaluator::Facility { benefit },
        ))
    }

    /// Monotone nonsubmodular function `g(|S ∩ {a,b}|) + Σ_{v∈S} w_v`.
    ///
    /// Requires `g[0] = 0`, `0 ≤ g[1]` and `2·g[1] < g[2]`, which makes the
    /// pair complementary; the submodularity ratio is then `2·g[1]/g[2]`.
    pub fn pair_supermodular(
        m: usize,
        pair: (Element, Element),
        g: [f64; 3],
        weights: Vec<f64>,
    ) -> Result<SetFunction, SetFnError> {
        let ground = GroundSet::new(m)?;
        if m < 2 {
            return config_err("pair_supermodular needs |V| >= 2");
        }
        if pair.0 == pair.1 || pair.0 .0 >= m || pair.1 .0 >= m {
            return config_err(format!(
                "pair ({}, {}) must be two distinct elements",
                pair.0, pair.1
            ));
        }
        if g[0] != 0.0 || g[1] < 0.0 || 2.0 * g[1] >= g[2] || !g.iter().all(|x| x.is_finite()) {
            return config_err(format!(
                "g = {g:?} must satisfy g0 = 0, g1 >= 0 and 2*g1 < g2"
            ));
        }
        if weights.len() != m {
            return config_err(format!(
                "expected {m} element weights, got {}",
                weights.len()
            ));
        }
        check_weights(&weights, "element weight")?;
        Ok(SetFunction::from_evaluator(
            ground,
            "pair_supermodular",
            Evaluator::Pair { pair, g, weights },
        ))
    }

    pub fn modular(weights: Vec<f64>) -> Result<SetFunction, SetFnError> {
        let ground = GroundSet::new(weights.len())?;
        check_weights(&weights, "element weight")?;
        Ok(SetFunction::from_evaluator(
            ground,
            "modular",
            Evaluator::Modular { weights },
        ))
    }

    /// Arbitrary function given by its value on every subset, indexed by bitmask.
    ///
    /// Only normalization and nonnegativity are enforced; monotonicity is left
    /// to [`check_structure`] so malformed inputs can be exercised.
    pub fn from_table(
        values: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<SetFunction, SetFnError> {
        if !values.len().is_power_of_two() || values.len() < 2 {
            return config_err("table length must be 2^|V| with |V| >= 1");
        }
        let m = values.len().trailing_zeros() as usize;
        let ground = GroundSet::new(m)?;
        if values[0] != 0.0 {
            return config_err("f(∅) must be 0");
        }
        check_weights(&values, "table value")?;
        Ok(SetFunction::from_evaluator(
            ground,
            label,
            Evaluator::Table { values },
        ))
    }

    /// Pointwise average `(1/n) Σ f_i`.
    pub fn average(parts: &[SetFunction]) -> Result<SetFunction, SetFnError> {
        let first = match parts.first() {
            Some(f) => f,
            None => return config_err("average of zero functions"),
        };
        if parts.iter().any(|f| f.ground != first.ground) {
            return config_err("local functions are defined over different ground sets");
        }
        Ok(SetFunction::from_evaluator(
            first.ground.clone(),
            format!("average of {} locals", parts.len()),
            Evaluator::Average {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn ground(&self) -> &GroundSet {
        &self.ground
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: Subset) -> f64 {
        debug_assert!(s.is_subset_of(self.ground.full()));
        if let Some(&v) = self.memo.read().expect("memo lock").get(&s.bits()) {
            return v;
        }
        let v = self.evaluator.eval(s);
        self.memo.write().expect("memo lock").insert(s.bits(), v);
        v
    }

    /// `f(V)`.
    pub fn full_value(&self) -> f64 {
        self.eval(self.ground.full())
    }

    /// `max_v f({v})`.
    pub fn max_singleton(&self) -> f64 {
        self.ground
            .elements()
            .map(|e| self.eval(Subset::singleton(e)))
            .fold(0.0, f64::max)
    }

    /// Value of every subset, indexed by bitmask.
    pub fn table(&self) -> Vec<f64> {
        (0..1u64 << self.ground.len())
            .map(|b| self.eval(Subset::from_bits(b)))
            .collect()
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<(), SetFnError> {
    match w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        Some(bad) => config_err(format!("{what} {bad} must be finite and nonnegative")),
        None => Ok(()),
    }
}

/// `f({v} ∪ S) − f(S)` for `v ∉ S`.
pub fn marginal_gain(f: &SetFunction, v: Element, s: Subset) -> Result<f64, SetFnError> {
    if v.0 >= f.ground().len() {
        return Err(SetFnError::OutOfGround {
            element: v,
            ground: f.ground().len(),
        });
    }
    if s.contains(v) {
        return Err(SetFnError::ElementInSet { element: v, set: s });
    }
    Ok(f.eval(s.with(v)) - f.eval(s))
}

/// `A ⊆ B ⊆ V`, `v ∉ B` with `gain(v|A) < gain(v|B)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SubmodularityViolation {
    pub a: Subset,
    pub b: Subset,
    pub v: Element,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub is_monotone: bool,
    pub is_submodular: bool,
    pub submodularity_ratio: f64,
    /// First `A ⊆ B` found with `f(A) > f(B)`.
    pub monotonicity_witness: Option<(Subset, Subset)>,
    pub submodularity_witness: Option<SubmodularityViolation>,
    /// `(A, B)` attaining the ratio when it is below 1.
    pub ratio_witness: Option<(Subset, Subset)>,
}

pub fn check_structure(f: &SetFunction) -> Result<StructureReport, SetFnError> {
    check_structure_with_cap(f, STRUCTURE_CAP)
}

/// Exhaustive structure report.
///
/// Monotonicity and submodularity enumerate every chain `A ⊆ B ⊆ V`. The
/// ratio enumerates every pair `(A, B)`; since both sides depend on `A` only
/// through `A \ B`, pairs are visited as `(D, B)` with `D ⊆ V \ B`. Pairs whose
/// increment `f(A∪B) − f(B)` is not positive impose no constraint.
pub fn check_structure_with_cap(
    f: &SetFunction,
    cap: usize,
) -> Result<StructureReport, SetFnError> {
    let m = f.ground().len();
    if m > cap {
        return Err(SetFnError::OverCap { size: m, cap });
    }
    let table = f.table();
    let val = |s: Subset| table[s.bits() as usize];
    let full = f.ground().full();

    let mut monotonicity_witness = None;
    let mut submodularity_witness = None;
    'chains: for b_bits in 0..1u64 << m {
        let b = Subset::from_bits(b_bits);
        let outside = full.difference(b);
        for a in b.subsets() {
            if monotonicity_witness.is_none() && val(a) > val(b) {
                monotonicity_witness = Some((a, b));
            }
            if submodularity_witness.is_none() {
                for v in outside.iter() {
                    let gain_a = val(a.with(v)) - val(a);
                    let gain_b = val(b.with(v)) - val(b);
                    if gain_a < gain_b {
                        submodularity_witness = Some(SubmodularityViolation { a, b, v });
                        break;
                    }
                }
            }
            if monotonicity_witness.is_some() && submodularity_witness.is_some() {
                break 'chains;
            }
        }
    }

    let mut ratio = 1.0f64;
    let mut ratio_witness = None;
    for b_bits in 0..1u64 << m {
        let b = Subset::from_bits(b_bits);
        let base = val(b);
        let gains: Vec<(Element, f64)> = full
            .difference(b)
            .iter()
            .map(|a| (a, val(b.with(a)) - base))
            .collect();
        for d in full.difference(b).subsets().skip(1) {
            let increment = val(d.union(b)) - base;
            if increment <= 0.0 {
                continue;
            }
            let summed: f64 = gains
                .iter()
                .filter(|(a, _)| d.contains(*a))
                .map(|(_, g)| g)
                .sum();
            let r = summed / increment;
            if r < ratio {
                ratio = r;
                ratio_witness = Some((d, b));
            }
        }
    }

    Ok(StructureReport {
        is_monotone: monotonicity_witness.is_none(),
        is_submodular: submodularity_witness.is_none(),
        submodularity_ratio: ratio.clamp(0.0, 1.0),
        monotonicity_witness,
        submodularity_witness,
        ratio_witness,
    })
}

/// Parameters for one function of the corpus. Absent data fields are drawn
/// at random from the seed. Element and universe indices are 1-based.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub kind: Option<FunctionKind>,
    /// `|V|`; implied by `sets`, `weights` or `benefits` when those are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<usize>,
    /// Coverage universe size, or number of customers for facility location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<Vec<usize>>>,
    /// Universe weights (weighted coverage) or element weights (modular, pair).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benefits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<[usize; 2]>,
    /// Coverage inclusion probability for random sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Give every agent the same function.
    #[serde(default)]
    pub identical: bool,
}

impl FunctionSpec {
    pub fn new(kind: FunctionKind) -> FunctionSpec {
        FunctionSpec {
            kind: Some(kind),
            ..FunctionSpec::default()
        }
    }

    pub fn with_ground(mut self, m: usize) -> FunctionSpec {
        self.ground = Some(m);
        self
    }

    fn has_explicit_data(&self) -> bool {
        self.sets.is_some()
            || self.benefits.is_some()
            || (self.weights.is_some() && matches!(self.kind, Some(FunctionKind::Modular)))
    }

    fn require_ground(&self) -> Result<usize, SetFnError> {
        match self.ground {
            Some(m) if (1..=MAX_GROUND).contains(&m) => Ok(m),
            Some(m) => config_err(format!("ground must be in 1..={MAX_GROUND}, got {m}")),
            None => config_err("`ground` is required when the function data is drawn at random"),
        }
    }
}

/// Build one function of the corpus.
pub fn build_test_function(spec: &FunctionSpec, seed: u64) -> Result<SetFunction, SetFnError> {
    let kind = match spec.kind {
        Some(k) => k,
        None => return config_err("missing function `kind`"),
    };
    let mut rng = seeding::rng_for(seed, "function", 0);
    match kind {
        FunctionKind::Coverage | FunctionKind::WeightedCoverage => {
            let sets = match &spec.sets {
                Some(sets) => sets.clone(),
                None => {
                    let m = spec.require_ground()?;
                    let universe = spec.universe.unwrap_or(2 * m);
                    let p = spec.density.unwrap_or(0.3);
                    if !(0.0..=1.0).contains(&p) {
                        return config_err(format!("density {p} must be in [0, 1]"));
                    }
                    (0..m)
                        .map(|_| (1..=universe).filter(|_| rng.random_bool(p)).collect())
                        .collect()
                }
            };
            if let Some(m) = spec.ground {
                if m != sets.len() {
                    return config_err(format!("ground = {m} but {} sets given", sets.len()));
                }
            }
            let universe = match spec.universe {
                Some(u) => u,
                None => sets.iter().flatten().copied().max().unwrap_or(0).max(1),
            };
            let weights = match (kind, &spec.weights) {
                (FunctionKind::Coverage, Some(_)) => {
                    return config_err("plain coverage takes no weights; use weighted_coverage")
                }
                (FunctionKind::Coverage, None) => None,
                (_, Some(w)) => Some(w.clone()),
                (_, None) => Some(
                    (0..universe)
                        .map(|_| rng.random_range(1..=5) as f64)
                        .collect(),
                ),
            };
            SetFunction::coverage(universe, &sets, weights.as_deref())
        }
        FunctionKind::FacilityLocation => {
            let benefit = match &spec.benefits {
                Some(b) => b.clone(),
                None => {
                    let m = spec.require_ground()?;
                    let customers = spec.universe.unwrap_or(2 * m);
                    (0..customers)
                        .map(|_| (0..m).map(|_| rng.random_range(0..=9) as f64).collect())
                        .collect()
                }
            };
            SetFunction::facility_location(benefit)
        }
        FunctionKind::PairSupermodular => {
            let m = match (&spec.weights, spec.ground) {
                (Some(w), _) => w.len(),
                (None, Some(m)) => m,
                (None, None) => 3,
            };
            let pair = match spec.pair {
                Some([a, b]) => match (Element::from_id(a), Element::from_id(b)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return config_err("pair ids are 1-based"),
                },
                None => {
                    if m < 2 {
                        return config_err("pair_supermodular needs |V| >= 2");
                    }
                    let a = rng.random_range(0..m);
                    let mut b = rng.random_range(0..m - 1);
                    if b >= a {
                        b += 1;
                    }
                    (Element(a.min(b)), Element(a.max(b)))
                }
            };
            let weights = match &spec.weights {
                Some(w) => w.clone(),
                None => (0..m)
                    .map(|v| {
                        if v == pair.0 .0 || v == pair.1 .0 {
                            0.0
                        } else {
                            rng.random_range(0..=3) as f64
                        }
                    })
                    .collect(),
            };
            SetFunction::pair_supermodular(m, pair, spec.g.unwrap_or([0.0, 1.0, 3.0]), weights)
        }
        FunctionKind::Modular => {
            let weights = match &spec.weights {
                Some(w) => w.clone(),
                None => {
                    let m = spec.require_ground()?;
                    (0..m).map(|_| rng.random_range(0..=9) as f64).collect()
                }
            };
            SetFunction::modular(weights)
        }
    }
}

/// Local functions for `n` agents plus the bounds used by the consensus analysis.
#[derive(Clone, Debug)]
pub struct LocalFamily {
    pub locals: Vec<SetFunction>,
    /// `F_h = max_i f_i(V)`.
    pub f_h: f64,
    /// `F'_h = max_i max_v f_i({v})`; valid as a gain bound only for submodular locals.
    pub f_h_tight: f64,
}

impl LocalFamily {
    pub fn from_locals(locals: Vec<SetFunction>) -> Result<LocalFamily, SetFnError> {
        let first = match locals.first() {
            Some(f) => f,
            None => return config_err("a family needs at least one local function"),
        };
        if locals.iter().any(|f| f.ground() != first.ground()) {
            return config_err("local functions are defined over different ground sets");
        }
        let f_h = locals
            .iter()
            .map(SetFunction::full_value)
            .fold(0.0, f64::max);
        let f_h_tight = locals
            .iter()
            .map(SetFunction::max_singleton)
            .fold(0.0, f64::max);
        Ok(LocalFamily {
            locals,
            f_h,
            f_h_tight,
        })
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn ground(&self) -> &GroundSet {
        self.locals[0].ground()
    }

    pub fn average(&self) -> SetFunction {
        SetFunction::average(&self.locals).expect("family members share a ground set")
    }
}

/// `n` local functions over one ground set. Agents get independent draws
/// unless `spec` carries explicit data or sets `identical`.
pub fn local_family(n: usize, spec: &FunctionSpec, seed: u64) -> Result<LocalFamily, SetFnError> {
    if n == 0 {
        return config_err("n must be at least 1");
    }
    let base = spec.seed.unwrap_or(seed);
    let locals = if spec.identical || spec.has_explicit_data() {
        let f = build_test_function(spec, seeding::derive_seed(base, "locals", 0))?;
        vec![f; n]
    } else {
        (0..n)
            .map(|i| build_test_function(spec, seeding::derive_seed(base, "locals", i as u64)))
            .collect::<Result<Vec<_>, _>>()?
    };
    LocalFamily::from_locals(locals)
}


#[cfg(test)]
mod tests {
    use super::fixtures::{c4, pairfn};
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[usize]) -> Subset {
        ids.iter().map(|&i| Element(i - 1)).collect()
    }

    #[test]
    fn marginal_gain_on_c4() {
        let f = c4();
        assert_eq!(marginal_gain(&f, Element(0), Subset::EMPTY).unwrap(), 3.0);
        assert_eq!(marginal_gain(&f, Element(1), set(&[1])).unwrap(), 1.0);
        assert_eq!(
            marginal_gain(&f, Element(0), set(&[1])),
            Err(SetFnError::ElementInSet {
                element: Element(0),
                set: set(&[1])
            })
        );
        assert!(matches!(
            marginal_gain(&f, Element(9), Subset::EMPTY),
            Err(SetFnError::OutOfGround { .. })
        ));
    }

    #[test]
    fn modular_weight_one_gain_is_one() {
        let f = SetFunction::modular(vec![1.0; 5]).unwrap();
        for s in Subset::full(5).subsets() {
            for v in Subset::full(5).difference(s).iter() {
                assert_eq!(marginal_gain(&f, v, s).unwrap(), 1.0);
            }
            assert_eq!(f.eval(s), s.len() as f64);
        }
    }

    #[test]
    fn c4_is_submodular_with_unit_ratio() {
        let report = check_structure(&c4()).unwrap();
        assert!(report.is_monotone);
        assert!(report.is_submodular);
        assert_eq!(report.submodularity_ratio, 1.0);
        assert_eq!(report.ratio_witness, None);
        assert_eq!(c4().full_value(), 6.0);
    }

    #[test]
    fn pairfn_ratio_is_two_thirds() {
        let report = check_structure(&pairfn()).unwrap();
        assert!(report.is_monotone);
        assert!(!report.is_submodular);
        assert_eq!(report.submodularity_ratio, 2.0 / 3.0);
        assert_eq!(report.ratio_witness, Some((set(&[1, 2]), Subset::EMPTY)));
        assert!(report.submodularity_witness.is_some());
    }

    #[test]
    fn zero_function_has_vacuous_ratio() {
        let f = SetFunction::from_table(vec![0.0; 8], "zero").unwrap();
        let report = check_structure(&f).unwrap();
        assert!(report.is_monotone);
        assert!(report.is_submodular);
        assert_eq!(report.submodularity_ratio, 1.0);
    }

    #[test]
    fn nonmonotone_table_is_reported() {
        // f({v1}) = 2, f({v1,v2}) = 1
        let f = SetFunction::from_table(vec![0.0, 2.0, 1.0, 1.0], "dip").unwrap();
        let report = check_structure(&f).unwrap();
        assert!(!report.is_monotone);
        assert_eq!(report.monotonicity_witness, Some((set(&[1]), set(&[1, 2]))));
    }

    #[test]
    fn structure_check_refuses_over_cap() {
        let f = SetFunction::modular(vec![1.0; 11]).unwrap();
        assert_eq!(
            check_structure(&f),
            Err(SetFnError::OverCap { size: 11, cap: 10 })
        );
        assert!(check_structure_with_cap(&f, 11).is_ok());
    }

    #[test]
    fn build_from_spec_examples() {
        let spec = FunctionSpec {
            kind: Some(FunctionKind::Coverage),
            universe: Some(6),
            sets: Some(vec![vec![1, 2, 3], vec![3, 4], vec![5], vec![4, 5, 6]]),
            ..FunctionSpec::default()
        };
        assert_eq!(build_test_function(&spec, 0).unwrap().full_value(), 6.0);

        let modular = FunctionSpec {
            kind: Some(FunctionKind::Modular),
            weights: Some(vec![1.0; 5]),
            ..FunctionSpec::default()
        };
        let f = build_test_function(&modular, 0).unwrap();
        assert_eq!(f.eval(set(&[1, 3, 5])), 3.0);

        let pair = FunctionSpec {
            kind: Some(FunctionKind::PairSupermodular),
            g: Some([0.0, 1.0, 3.0]),
            ..FunctionSpec::default()
        };
        let f = build_test_function(&pair, 11).unwrap();
        assert_eq!(check_structure(&f).unwrap().submodularity_ratio, 2.0 / 3.0);
    }

    #[test]
    fn malformed_specs_are_config_errors() {
        let bad_item = FunctionSpec {
            kind: Some(FunctionKind::Coverage),
            universe: Some(3),
            sets: Some(vec![vec![1, 4]]),
            ..FunctionSpec::default()
        };
        assert!(matches!(
            build_test_function(&bad_item, 0),
            Err(SetFnError::Config(_))
        ));

        let submodular_pair = FunctionSpec {
            kind: Some(FunctionKind::PairSupermodular),
            g: Some([0.0, 2.0, 3.0]),
            ..FunctionSpec::default()
        };
        assert!(matches!(
            build_test_function(&submodular_pair, 0),
            Err(SetFnError::Config(_))
        ));

        let no_ground = FunctionSpec::new(FunctionKind::FacilityLocation);
        assert!(matches!(
            build_test_function(&no_ground, 0),
            Err(SetFnError::Config(_))
        ));

        let negative = FunctionSpec {
            kind: Some(FunctionKind::Modular),
            weights: Some(vec![1.0, -1.0]),
            ..FunctionSpec::default()
        };
        assert!(matches!(
            build_test_function(&negative, 0),
            Err(SetFnError::Config(_))
        ));
    }

    #[test]
    fn local_family_bounds() {
        let spec = FunctionSpec {
            kind: Some(FunctionKind::Coverage),
            universe: Some(6),
            sets: Some(vec![vec![1, 2, 3], vec![3, 4], vec![5], vec![4, 5, 6]]),
            ..FunctionSpec::default()
        };
        let fam = local_family(1, &spec, 3).unwrap();
        assert_eq!(fam.f_h, 6.0);
        assert_eq!(fam.f_h_tight, 3.0);

        let ones = FunctionSpec {
            kind: Some(FunctionKind::Modular),
            weights: Some(vec![1.0; 7]),
            ..FunctionSpec::default()
        };
        assert_eq!(local_family(4, &ones, 0).unwrap().f_h, 7.0);

        let fam = local_family(3, &spec, 0).unwrap();
        let avg = fam.average();
        for s in Subset::full(4).subsets() {
            assert_eq!(avg.eval(s), c4().eval(s));
        }
    }

    #[test]
    fn random_locals_differ_but_share_ground() {
        let spec = FunctionSpec::new(FunctionKind::WeightedCoverage).with_ground(6);
        let fam = local_family(4, &spec, 42).unwrap();
        assert!(fam.locals.iter().all(|f| f.ground().len() == 6));
        let tables: Vec<Vec<f64>> = fam.locals.iter().map(SetFunction::table).collect();
        assert!(tables.windows(2).any(|w| w[0] != w[1]));
        // reproducible
        let again = local_family(4, &spec, 42).unwrap();
        assert_eq!(again.locals[2].table(), tables[2]);
    }

    fn submodular_kinds() -> impl Strategy<Value = FunctionKind> {
        prop_oneof![
            Just(FunctionKind::Coverage),
            Just(FunctionKind::WeightedCoverage),
            Just(FunctionKind::FacilityLocation),
            Just(FunctionKind::Modular),
        ]
    }

    fn any_kind() -> impl Strategy<Value = FunctionKind> {
        prop_oneof![submodular_kinds(), Just(FunctionKind::PairSupermodular)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn built_functions_are_normalized_and_monotone(kind in any_kind(), m in 2usize..=8, seed: u64) {
            let f = build_test_function(&FunctionSpec::new(kind).with_ground(m), seed).unwrap();
            prop_assert_eq!(f.eval(Subset::EMPTY), 0.0);
            for b in f.ground().full().subsets() {
                for a in b.subsets() {
                    prop_assert!(f.eval(a) <= f.eval(b));
                }
            }
        }

        #[test]
        fn submodular_kinds_have_diminishing_returns(kind in submodular_kinds(), m in 2usize..=8, seed: u64) {
            let f = build_test_function(&FunctionSpec::new(kind).with_ground(m), seed).unwrap();
            let full = f.ground().full();
            for b in full.subsets() {
                for a in b.subsets() {
                    for v in full.difference(b).iter() {
                        let ga = f.eval(a.with(v)) - f.eval(a);
                        let gb = f.eval(b.with(v)) - f.eval(b);
                        prop_assert!(ga >= gb);
                    }
                }
            }
            let report = check_structure(&f).unwrap();
            prop_assert!(report.is_submodular);
            prop_assert_eq!(report.submodularity_ratio, 1.0);
        }

        #[test]
        fn pair_supermodular_ratio_is_exact(m in 2usize..=8, seed: u64) {
            let f = build_test_function(&FunctionSpec::new(FunctionKind::PairSupermodular).with_ground(m), seed).unwrap();
            let report = check_structure(&f).unwrap();
            prop_assert!(report.is_monotone);
            prop_assert!(!report.is_submodular);
            prop_assert_eq!(report.submodularity_ratio, 2.0 / 3.0);
        }

        #[test]
        fn average_of_submodular_locals_is_submodular(kind in submodular_kinds(), n in prop::sample::select(vec![1usize, 2, 4]), m in 2usize..=6, seed: u64) {
            // power-of-two n keeps the average exact, so the checks need no tolerance
            let fam = local_family(n, &FunctionSpec::new(kind).with_ground(m), seed).unwrap();
            let report = check_structure(&fam.average()).unwrap();
            prop_assert!(report.is_monotone);
            prop_assert!(report.is_submodular);
        }

        #[test]
        fn submodular_iff_unit_ratio(kind in any_kind(), m in 2usize..=6, seed: u64) {
            let f = build_test_function(&FunctionSpec::new(kind).with_ground(m), seed).unwrap();
            let report = check_structure(&f).unwrap();
            prop_assert_eq!(report.is_submodular, report.submodularity_ratio == 1.0);
        }
    }
}
