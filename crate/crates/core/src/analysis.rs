//! Closed-form error bounds and post-hoc audits of recorded runs.

use std::f64::consts::E;

use serde::Serialize;
use thiserror::Error;

use crate::mixing::BOUND_TOL;
use crate::protocol::{run, ConfigError, PsiChoice, RunConfig, RunError, RunTrace};
use crate::subset::Subset;

/// Allowed drift of the agent average during consensus, relative to
/// `max(1, F_h)`.
pub const CONSERVATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("consensus bound needs 0 ≤ μ(W) < 1, got μ = {0}")]
    AssumptionViolation(f64),
    #[error("sweep T values must be strictly ascending")]
    Unsorted,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace does not match the configuration: {0}")]
    Mismatch(String),
}

/// `ε(T) = √n μ^T F_h`.
pub fn epsilon(n: usize, mu: f64, t: usize, f_h: f64) -> Result<f64, AnalysisError> {
    if !(0.0..1.0).contains(&mu) {
        return Err(AnalysisError::AssumptionViolation(mu));
    }
    Ok((n as f64).sqrt() * mu.powi(t as i32) * f_h)
}

/// `4ε(T)`, the smallest admissible threshold width.
pub fn psi_min(n: usize, mu: f64, t: usize, f_h: f64) -> Result<f64, AnalysisError> {
    epsilon(n, mu, t, f_h).map(|e| 4.0 * e)
}

/// `E_r = K(ψ + 2ε)`.
pub fn error_term(k: usize, psi: f64, epsilon: f64) -> f64 {
    k as f64 * (psi + 2.0 * epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub rhs: f64,
    pub achieved: f64,
    /// `achieved − rhs`.
    pub margin: f64,
    pub holds: bool,
    /// The right-hand side is nonpositive, so the bound says nothing.
    pub vacuous: bool,
}

impl BoundCheck {
    fn new(achieved: f64, rhs: f64) -> BoundCheck {
        BoundCheck {
            rhs,
            achieved,
            margin: achieved - rhs,
            holds: achieved >= rhs - BOUND_TOL,
            vacuous: rhs <= 0.0,
        }
    }
}

fn trace_error_term(trace: &RunTrace) -> f64 {
    error_term(trace.header.k, trace.header.psi, trace.header.epsilon_t)
}

/// `f(S̄^K) ≥ (1 − 1/e) f(S*) − E_r`.
pub fn theorem1_check(trace: &RunTrace, optimum: f64) -> BoundCheck {
    BoundCheck::new(
        trace.value,
        (1.0 - 1.0 / E) * optimum - trace_error_term(trace),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Corollary1Outcome {
    Checked {
        gamma_c: f64,
        #[serde(flatten)]
        check: BoundCheck,
    },
    Skipped {
        reason: String,
    },
}

impl Corollary1Outcome {
    /// A skipped check does not count as a failure.
    pub fn passes(&self) -> bool {
        match self {
            Corollary1Outcome::Checked { check, .. } => check.holds,
            Corollary1Outcome::Skipped { .. } => true,
        }
    }
}

/// `f(S̄^K) ≥ (1 − e^{−γ_c}) f(S*) − E_r` with `γ_c = min_i γ_i`.
pub fn corollary1_check(trace: &RunTrace, optimum: f64, gammas: &[f64]) -> Corollary1Outcome {
    if gammas.is_empty() {
        return Corollary1Outcome::Skipped {
            reason: "no submodularity ratios supplied".into(),
        };
    }
    if let Some(i) = gammas.iter().position(|&g| g <= 0.0) {
        return Corollary1Outcome::Skipped {
            reason: format!("γ_{} = 0", i + 1),
        };
    }
    let gamma_c = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let rhs = (1.0 - (-gamma_c).exp()) * optimum - trace_error_term(trace);
    Corollary1Outcome::Checked {
        gamma_c,
        check: BoundCheck::new(trace.value, rhs),
    }
}

/// Outcome of one audited invariant over all rounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub holds: bool,
    /// Smallest `bound − measured` seen; absent for purely set-valued checks.
    pub margin: Option<f64>,
    pub checked: usize,
    /// First violation, if any.
    pub failure: Option<String>,
}

impl LemmaCheck {
    fn new() -> LemmaCheck {
        LemmaCheck {
            holds: true,
            margin: None,
            checked: 0,
            failure: None,
        }
    }

    fn record(&mut self, margin: Option<f64>, ok: bool, describe: impl FnOnce() -> String) {
        self.checked += 1;
        if let Some(m) = margin {
            self.margin = Some(self.margin.map_or(m, |old| old.min(m)));
        }
        if !ok && self.holds {
            self.holds = false;
            self.failure = Some(describe());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaAudit {
    /// Agent average of `x` preserved by every consensus step.
    pub conservation: LemmaCheck,
    /// `δ_k(t) ≤ √n μ^t F_h` for `t = 1..T`.
    pub lemma2: LemmaCheck,
    /// `x_{i,v_{i*}}^T − x_{i,v_{j*}}^T ≤ 4ε(T)`.
    pub lemma3: LemmaCheck,
    /// Candidate sets at `T'` agree, equal the global intersection, are
    /// nonempty and contain `V*`.
    pub lemma4: LemmaCheck,
    /// Per-round gain `≥ max marginal − ψ − 2ε(T)`.
    pub lemma5: LemmaCheck,
    /// The recorded choices make up the final selection.
    pub agreement: LemmaCheck,
}

impl LemmaAudit {
    pub fn all_pass(&self) -> bool {
        [
            &self.conservation,
            &self.lemma2,
            &self.lemma3,
            &self.lemma4,
            &self.lemma5,
            &self.agreement,
        ]
        .iter()
        .all(|c| c.holds)
    }
}

fn check_shape(trace: &RunTrace, config: &RunConfig) -> Result<(), AnalysisError> {
    let h = &trace.header;
    let mismatch = |what: &str, a: usize, b: usize| {
        Err(AnalysisError::Mismatch(format!(
            "{what}: trace {a}, config {b}"
        )))
    };
    if h.n != config.n() {
        return mismatch("agents", h.n, config.n());
    }
    if h.ground != config.ground_size() {
        return mismatch("ground set", h.ground, config.ground_size());
    }
    if trace.rounds.len() != h.k {
        return mismatch("rounds", trace.rounds.len(), h.k);
    }
    for r in &trace.rounds {
        if r.x.len() != h.t + 1 || r.candidates.len() != h.t_prime - h.t {
            return Err(AnalysisError::Mismatch(format!(
                "round {} has the wrong number of steps",
                r.round + 1
            )));
        }
        if r.argmax.len() != h.n
            || r.x
                .iter()
                .any(|s| s.len() != h.n || s.iter().any(|row| row.len() != r.elements.len()))
            || r.candidates.iter().any(|s| s.len() != h.n)
        {
            return Err(AnalysisError::Mismatch(format!(
                "round {} has the wrong dimensions",
                r.round + 1
            )));
        }
    }
    Ok(())
}

/// Evaluate every protocol invariant from recorded data. `config` supplies
/// the global objective for the per-round gain check.
pub fn audit_trace(trace: &RunTrace, config: &RunConfig) -> Result<LemmaAudit, AnalysisError> {
    check_shape(trace, config)?;
    let h = &trace.header;
    let f = config.objective();
    let sqrt_n = (h.n as f64).sqrt();
    let drift_tol = CONSERVATION_TOL * h.f_h.max(1.0);
    let mut audit = LemmaAudit {
        conservation: LemmaCheck::new(),
        lemma2: LemmaCheck::new(),
        lemma3: LemmaCheck::new(),
        lemma4: LemmaCheck::new(),
        lemma5: LemmaCheck::new(),
        agreement: LemmaCheck::new(),
    };
    let mut prefix = Subset::EMPTY;

    for r in &trace.rounds {
        let k = r.round + 1;
        let targets = r.targets();
        let delta = r.delta();

        for (t, snapshot) in r.x.iter().enumerate() {
            let drift = targets
                .iter()
                .enumerate()
                .map(|(v, m)| {
                    (snapshot.iter().map(|row| row[v]).sum::<f64>() / h.n as f64 - m).abs()
                })
                .fold(0.0, f64::max);
            audit
                .conservation
                .record(Some(drift_tol - drift), drift <= drift_tol, || {
                    format!("round {k}, t = {t}: average drifted by {drift:e}")
                });
        }

        for (t, &d) in delta.iter().enumerate().skip(1) {
            let bound = sqrt_n * h.mu.powi(t as i32) * h.f_h;
            audit
                .lemma2
                .record(Some(bound - d), d <= bound + BOUND_TOL, || {
                    format!("round {k}, t = {t}: δ = {d} exceeds {bound}")
                });
        }

        let last = &r.x[h.t];
        let bound3 = 4.0 * h.epsilon_t;
        let cols: Vec<usize> = r
            .argmax
            .iter()
            .map(|&e| r.index_of(e).expect("argmax lies in V_k"))
            .collect();
        for (i, row) in last.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let gap = row[cols[i]] - row[c];
                audit.lemma3.record(Some(bound3 - gap), gap <= bound3 + BOUND_TOL, || {
                    format!("round {k}: agent {} sees a gap of {gap} to agent {}'s maximizer, bound {bound3}", i + 1, j + 1)
                });
            }
        }

        let first = &r.candidates[0];
        let final_sets = r.candidates.last().expect("at least the thresholded sets");
        let global = first
            .iter()
            .fold(Subset::full(h.ground), |acc, &s| acc.intersection(s));
        let v_star: Subset = r.argmax.iter().copied().collect();
        let common = final_sets[0];
        let problem = if final_sets.iter().any(|&s| s != common) {
            Some("candidate sets differ at T'".to_string())
        } else if common != global {
            Some(format!(
                "final set {common:?} differs from the global intersection {global:?}"
            ))
        } else if common.is_empty() {
            Some("final candidate set is empty".to_string())
        } else if !v_star.is_subset_of(common) {
            Some(format!("V* = {v_star:?} is not contained in {common:?}"))
        } else {
            None
        };
        audit.lemma4.record(None, problem.is_none(), || {
            format!("round {k}: {}", problem.clone().unwrap_or_default())
        });

        let base = f.eval(prefix);
        let best = f
            .ground()
            .full()
            .difference(prefix)
            .iter()
            .map(|v| f.eval(prefix.with(v)) - base)
            .fold(f64::NEG_INFINITY, f64::max);
        let gain = f.eval(prefix.with(r.chosen)) - base;
        let bound5 = best - h.psi - 2.0 * h.epsilon_t;
        audit
            .lemma5
            .record(Some(gain - bound5), gain >= bound5 - BOUND_TOL, || {
                format!("round {k}: gain {gain} below {bound5}")
            });

        let fresh = !prefix.contains(r.chosen);
        let expected = trace.selected.get(r.round).copied();
        audit
            .agreement
            .record(None, fresh && expected == Some(r.chosen), || {
                format!(
                    "round {k}: chose {} but the selection records {expected:?}",
                    r.chosen
                )
            });
        prefix.insert(r.chosen);
    }
    audit
        .agreement
        .record(None, trace.selected.len() == trace.rounds.len(), || {
            format!(
                "{} rounds but {} selected elements",
                trace.rounds.len(),
                trace.selected.len()
            )
        });
    Ok(audit)
}

/// Bounds and audits for one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub k: usize,
    pub t: usize,
    pub epsilon_t: f64,
    pub psi: f64,
    pub psi_min: Option<f64>,
    pub e_r: f64,
    pub achieved: f64,
    pub optimum: Option<f64>,
    pub theorem1: Option<BoundCheck>,
    pub corollary1: Option<Corollary1Outcome>,
    pub lemmas: LemmaAudit,
}

impl BoundsReport {
    pub fn passes(&self) -> bool {
        self.lemmas.all_pass()
            && self.theorem1.as_ref().is_none_or(|c| c.holds)
            && self
                .corollary1
                .as_ref()
                .is_none_or(Corollary1Outcome::passes)
    }
}

/// Assemble the full report. `gammas` enables the Corollary 1 check.
pub fn bounds_report(
    trace: &RunTrace,
    config: &RunConfig,
    optimum: Option<f64>,
    gammas: Option<&[f64]>,
) -> Result<BoundsReport, AnalysisError> {
    let h = &trace.header;
    Ok(BoundsReport {
        k: h.k,
        t: h.t,
        epsilon_t: h.epsilon_t,
        psi: h.psi,
        psi_min: psi_min(h.n, h.mu, h.t, h.f_h).ok(),
        e_r: trace_error_term(trace),
        achieved: trace.value,
        optimum,
        theorem1: optimum.map(|o| theorem1_check(trace, o)),
        corollary1: optimum
            .zip(gammas)
            .map(|(o, g)| corollary1_check(trace, o, g)),
        lemmas: audit_trace(trace, config)?,
    })
}

/// One row of a communication/accuracy tradeoff table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub psi: f64,
    pub psi_min: f64,
    pub epsilon: f64,
    #[serde(rename = "E_r")]
    pub e_r: f64,
    /// `None` when the run aborted, which happens when `ψ < 4ε(T)`.
    pub achieved: Option<f64>,
    pub rhs: Option<f64>,
    pub vacuous: Option<bool>,
}

/// Run `base` with consensus length `t` and tabulate the bounds.
pub fn sweep_point(
    base: &RunConfig,
    psi: PsiChoice,
    t: usize,
    optimum: Option<f64>,
) -> Result<SweepRow, AnalysisError> {
    let config = base.with_t(t, psi)?;
    let eps = epsilon(config.n(), config.mixing.mu(), t, config.f_h)?;
    let e_r = error_term(config.k, config.psi, eps);
    let achieved = match run(&config) {
        Ok(trace) => Some(trace.value),
        Err(RunError::Phase { .. }) => None,
        Err(RunError::Config(e)) => return Err(e.into()),
    };
    let rhs = optimum.map(|o| (1.0 - 1.0 / E) * o - e_r);
    Ok(SweepRow {
        t,
        psi: config.psi,
        psi_min: 4.0 * eps,
        epsilon: eps,
        e_r,
        achieved,
        rhs,
        vacuous: rhs.map(|r| r <= 0.0),
    })
}

pub fn tradeoff_sweep(
    base: &RunConfig,
    psi: PsiChoice,
    t_values: &[usize],
    optimum: Option<f64>,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if t_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Unsorted);
    }
    t_values
        .iter()
        .map(|&t| sweep_point(base, psi, t, optimum))
        .collect()
}
