//! Centralized reference algorithms: greedy, exhaustive optimum, and greedy
//! with bounded per-step error.

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::seeding::rng_for;
use crate::setfn::SetFunction;
use crate::subset::{Element, Subset};

/// Largest number of size-`K` subsets [`brute_force_optimum`] will enumerate.
pub const OPTIMUM_CAP: u128 = 1_000_000;

/// Slack for the per-step recurrence check.
pub const RECURRENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("C({m}, {k}) = {count} subsets exceeds the enumeration cap of {cap}")]
    OverCap {
        m: usize,
        k: usize,
        count: u128,
        cap: u128,
    },
    #[error("expected {expected} per-step errors, got {got}")]
    TauCount { expected: usize, got: usize },
    #[error("per-step error τ_{step} = {tau} must be finite and nonnegative")]
    BadTau { step: usize, tau: f64 },
}

/// One greedy run. `values[j] = f(Ḡ_{j+1})`, so `values[0] = f(∅)` and
/// `values.len() = selected.len() + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreedyResult {
    pub selected: Vec<Element>,
    pub values: Vec<f64>,
    /// Gain of the chosen element at each step.
    pub gains: Vec<f64>,
    /// Largest available gain at each step.
    pub best_gains: Vec<f64>,
}

impl GreedyResult {
    pub fn selected_set(&self) -> Subset {
        self.selected.iter().copied().collect()
    }

    pub fn value(&self) -> f64 {
        *self.values.last().expect("values always holds f(∅)")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Optimum {
    pub set: Subset,
    pub value: f64,
}

fn gains_over(f: &SetFunction, current: Subset) -> Vec<(Element, f64)> {
    let base = f.eval(current);
    f.ground()
        .full()
        .difference(current)
        .iter()
        .map(|v| (v, f.eval(current.with(v)) - base))
        .collect()
}

fn greedy_with<P>(f: &SetFunction, k: usize, mut pick: P) -> GreedyResult
where
    P: FnMut(usize, &[(Element, f64)], f64) -> (Element, f64),
{
    let steps = k.min(f.ground().len());
    let mut current = Subset::EMPTY;
    let mut out = GreedyResult {
        selected: Vec::with_capacity(steps),
        values: vec![f.eval(Subset::EMPTY)],
        gains: Vec::with_capacity(steps),
        best_gains: Vec::with_capacity(steps),
    };
    for step in 0..steps {
        let gains = gains_over(f, current);
        let best = gains
            .iter()
            .map(|&(_, g)| g)
            .fold(f64::NEG_INFINITY, f64::max);
        let (v, gain) = pick(step, &gains, best);
        current.insert(v);
        out.selected.push(v);
        out.values.push(f.eval(current));
        out.gains.push(gain);
        out.best_gains.push(best);
    }
    out
}

/// Standard greedy: the largest marginal gain each step, lowest index on
/// ties. Runs `min(K, |V|)` steps.
pub fn centralized_greedy(f: &SetFunction, k: usize) -> GreedyResult {
    greedy_with(f, k, |_, gains, best| {
        *gains.iter().find(|&&(_, g)| g == best).expect("nonempty")
    })
}

/// Greedy that, at step `j`, takes a uniformly random element among those
/// with gain `≥ max − τ_j`. The choice is driven by `seed` alone.
pub fn perturbed_greedy(
    f: &SetFunction,
    k: usize,
    taus: &[f64],
    seed: u64,
) -> Result<GreedyResult, BaselineError> {
    if taus.len() != k {
        return Err(BaselineError::TauCount {
            expected: k,
            got: taus.len(),
        });
    }
    if let Some((step, &tau)) = taus
        .iter()
        .enumerate()
        .find(|(_, t)| !(**t >= 0.0 && t.is_finite()))
    {
        return Err(BaselineError::BadTau {
            step: step + 1,
            tau,
        });
    }
    let mut rng = rng_for(seed, "perturbed_greedy", 0);
    Ok(greedy_with(f, k, |step, gains, best| {
        let eligible: Vec<(Element, f64)> = gains
            .iter()
            .copied()
            .filter(|&(_, g)| g >= best - taus[step])
            .collect();
        eligible[rng.random_range(0..eligible.len())]
    }))
}

fn binomial(m: usize, k: usize) -> u128 {
    let k = k.min(m - k);
    (0..k).fold(1u128, |acc, i| acc * (m - i) as u128 / (i + 1) as u128)
}

/// Exact `max_{|S| ≤ K} f(S)` by enumeration. Among maximizers the
/// lexicographically smallest (as an ascending element list) is returned.
pub fn brute_force_optimum(f: &SetFunction, k: usize) -> Result<Optimum, BaselineError> {
    let m = f.ground().len();
    let k = k.min(m);
    let count = binomial(m, k);
    if count > OPTIMUM_CAP {
        return Err(BaselineError::OverCap {
            m,
            k,
            count,
            cap: OPTIMUM_CAP,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for size in 0..=k {
        // combinations of `size` indices in lexicographic order
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let set: Subset = idx.iter().map(|&i| Element(i)).collect();
            let value = f.eval(set);
            let better = match &best {
                None => true,
                Some((b, bv)) => value > *bv || (value == *bv && idx < *b),
            };
            if better {
                best = Some((idx.clone(), value));
            }
            let Some(pos) = (0..size).rev().find(|&p| idx[p] < m - size + p) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    let (idx, value) = best.expect("the empty set is always enumerated");
    Ok(Optimum {
        set: idx.into_iter().map(Element).collect(),
        value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecurrenceRow {
    /// 1-based step index `j`.
    pub step: usize,
    /// `Δ_{j+1}`.
    pub lhs: f64,
    /// `(1 − γ/K) Δ_j + τ_j`.
    pub rhs: f64,
    pub holds: bool,
}

/// Check `Δ_{j+1} ≤ (1 − γ/K) Δ_j + τ_j` at every step, where
/// `Δ_j = f(S*) − f(Ḡ_j)`.
pub fn recurrence_check(
    result: &GreedyResult,
    optimum: f64,
    gamma: f64,
    k: usize,
    taus: &[f64],
) -> Vec<RecurrenceRow> {
    let delta: Vec<f64> = result.values.iter().map(|v| optimum - v).collect();
    let shrink = 1.0 - gamma / k as f64;
    delta
        .windows(2)
        .zip(taus)
        .enumerate()
        .map(|(j, (d, &tau))| {
            let rhs = shrink * d[0] + tau;
            RecurrenceRow {
                step: j + 1,
                lhs: d[1],
                rhs,
                holds: d[1] <= rhs + RECURRENCE_TOL,
            }
        })
        .collect()
}
