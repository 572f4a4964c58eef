//! Mixing matrices for average consensus: constructions, validation against
//! the graph, the spectral contraction rate `μ(W) = max{λ2, −λn}` and the
//! finite-time contraction bound `max_i Σ_j |(W^t)_ij − 1/n| ≤ √n μ^t`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::graph::Network;

/// Tolerance for row sums and symmetry.
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Slack added to the right-hand side of bound checks.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixingError {
    #[error("μ(W) is undefined for a single agent")]
    SingleAgent,
    #[error("matrix is not symmetric: |W[{i}][{j}] - W[{j}][{i}]| = {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix is {rows}x{cols}, expected {n}x{n}")]
    Dimension { rows: usize, cols: usize, n: usize },
    #[error("mixing matrix fails validation: {0}")]
    Invalid(String),
    #[error("matrix CSV: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Metropolis,
    /// `(I + W_metropolis) / 2`.
    Lazy,
    UniformComplete,
    Custom,
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Construction::Metropolis => "metropolis",
            Construction::Lazy => "lazy",
            Construction::UniformComplete => "uniform",
            Construction::Custom => "custom",
        })
    }
}

/// Symmetric doubly stochastic weights with cached `μ(W)`.
///
/// For a single agent `W = [1]` and `μ` is taken as 0, which makes every
/// consensus error bound vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    mu: f64,
    construction: Construction,
}

impl MixingMatrix {
    fn with_mu(
        weights: DMatrix<f64>,
        construction: Construction,
    ) -> Result<MixingMatrix, MixingError> {
        let mu = if weights.nrows() == 1 {
            0.0
        } else {
            spectral_mu(&weights)?
        };
        Ok(MixingMatrix {
            weights,
            mu,
            construction,
        })
    }

    /// Accept an arbitrary matrix; it must pass every condition of
    /// [`validate_mixing`] on `g`.
    pub fn custom(weights: DMatrix<f64>, g: &Network) -> Result<MixingMatrix, MixingError> {
        let report = validate_mixing(&weights, g)?;
        if !report.passes() {
            return Err(MixingError::Invalid(report.failures.join("; ")));
        }
        MixingMatrix::with_mu(weights, Construction::Custom)
    }

    /// Accept an arbitrary square matrix without validation, for adversarial
    /// runs. `μ` is computed when the matrix is symmetric, else `NaN`.
    pub fn unchecked(weights: DMatrix<f64>) -> MixingMatrix {
        let mu = if weights.nrows() == 1 {
            0.0
        } else {
            spectral_mu(&weights).unwrap_or(f64::NAN)
        };
        MixingMatrix {
            weights,
            mu,
            construction: Construction::Custom,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `W^t` by repeated multiplication.
    pub fn power(&self, t: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut p = DMatrix::identity(n, n);
        for _ in 0..t {
            p = &p * &self.weights;
        }
        p
    }

    /// Rows as CSV lines, 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n())
                .map(|j| format!("{:.16e}", self.weights[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `w_ij = 1/(1 + max(deg_i, deg_j))` on edges, `w_ii = 1 − Σ_j w_ij`.
pub fn metropolis_weights(g: &Network) -> Result<MixingMatrix, MixingError> {
    MixingMatrix::with_mu(metropolis_matrix(g), Construction::Metropolis)
}

fn metropolis_matrix(g: &Network) -> DMatrix<f64> {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// `(I + W_metropolis) / 2`; all eigenvalues are nonnegative.
pub fn lazy_metropolis_weights(g: &Network) -> Result<MixingMatrix, MixingError> {
    let n = g.n();
    let w = (DMatrix::identity(n, n) + metropolis_matrix(g)) * 0.5;
    MixingMatrix::with_mu(w, Construction::Lazy)
}

/// All entries `1/n`; reaches the exact average in one step on `K_n`.
pub fn uniform_complete_weights(n: usize) -> Result<MixingMatrix, MixingError> {
    if n < 2 {
        return Err(MixingError::Invalid("uniform weights need n >= 2".into()));
    }
    let w = DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(MixingMatrix {
        weights: w,
        mu: 0.0,
        construction: Construction::UniformComplete,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingReport {
    /// Nonnegative entries, zero off the edge set.
    pub nonnegative_on_edges: bool,
    pub rows_sum_to_one: bool,
    pub symmetric: bool,
    /// `μ(W) < 1`; a single agent passes trivially.
    pub mu_below_one: bool,
    pub mu: Option<f64>,
    pub failures: Vec<String>,
}

impl MixingReport {
    pub fn passes(&self) -> bool {
        self.nonnegative_on_edges && self.rows_sum_to_one && self.symmetric && self.mu_below_one
    }
}

/// Check the four consensus conditions for `w` on `g`.
pub fn validate_mixing(w: &DMatrix<f64>, g: &Network) -> Result<MixingReport, MixingError> {
    let n = g.n();
    if w.nrows() != n || w.ncols() != n {
        return Err(MixingError::Dimension {
            rows: w.nrows(),
            cols: w.ncols(),
            n,
        });
    }
    let mut failures = Vec::new();

    let mut nonnegative_on_edges = true;
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if v.is_nan() || v < 0.0 {
                nonnegative_on_edges = false;
                failures.push(format!("(1) W[{}][{}] = {v} is negative", i + 1, j + 1));
            } else if i != j && v != 0.0 && !g.has_edge(i, j) {
                nonnegative_on_edges = false;
                failures.push(format!(
                    "(1) W[{}][{}] = {v} but ({}, {}) is not an edge",
                    i + 1,
                    j + 1,
                    i + 1,
                    j + 1
                ));
            }
        }
    }

    let mut rows_sum_to_one = true;
    for i in 0..n {
        let s: f64 = w.row(i).iter().sum();
        if (s - 1.0).abs() > STRUCTURAL_TOL {
            rows_sum_to_one = false;
            failures.push(format!("(2) row {} sums to {s}", i + 1));
        }
    }

    let symmetric = match max_asymmetry(w) {
        Some((i, j, gap)) if gap > STRUCTURAL_TOL => {
            failures.push(format!(
                "(3) |W[{}][{}] - W[{}][{}]| = {gap:e}",
                i + 1,
                j + 1,
                j + 1,
                i + 1
            ));
            false
        }
        _ => true,
    };

    let (mu, mu_below_one) = if n == 1 {
        (None, true)
    } else if symmetric {
        let mu = spectral_mu(w)?;
        // μ < 1 up to eigensolver accuracy
        let ok = mu < 1.0 - 1e-10;
        if !ok {
            failures.push(format!("(4) μ(W) = {mu} is not below 1"));
        }
        (Some(mu), ok)
    } else {
        failures.push("(4) μ(W) undefined for an asymmetric matrix".into());
        (None, false)
    };

    Ok(MixingReport {
        nonnegative_on_edges,
        rows_sum_to_one,
        symmetric,
        mu_below_one,
        mu,
        failures,
    })
}

fn max_asymmetry(w: &DMatrix<f64>) -> Option<(usize, usize, f64)> {
    let n = w.nrows();
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let gap = (w[(i, j)] - w[(j, i)]).abs();
            if worst.is_none_or(|(_, _, g)| gap > g) {
                worst = Some((i, j, gap));
            }
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues(w: &DMatrix<f64>) -> Result<Vec<f64>, MixingError> {
    if w.nrows() != w.ncols() {
        return Err(MixingError::Dimension {
            rows: w.nrows(),
            cols: w.ncols(),
            n: w.nrows(),
        });
    }
    if let Some((i, j, gap)) = max_asymmetry(w) {
        if gap > STRUCTURAL_TOL {
            return Err(MixingError::Asymmetric {
                i: i + 1,
                j: j + 1,
                gap,
            });
        }
    }
    let eig = SymmetricEigen::try_new(w.clone(), 1e-15, 100_000)
        .ok_or_else(|| MixingError::Invalid("symmetric eigensolver did not converge".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// `μ(W) = max{λ2(W), −λn(W)}` from the full symmetric spectrum.
pub fn spectral_mu(w: &DMatrix<f64>) -> Result<f64, MixingError> {
    if w.nrows() < 2 {
        return Err(MixingError::SingleAgent);
    }
    let values = symmetric_eigenvalues(w)?;
    Ok(values[1].max(-values[values.len() - 1]))
}

/// Independent estimate of `μ(W)` as the spectral radius of `W − (1/n)11'`,
/// by power iteration. Tracks `‖Bx‖/‖x‖`, which converges to the largest
/// eigenvalue magnitude even when `λ2 = −λn`.
pub fn power_iteration_mu(w: &DMatrix<f64>, max_iter: usize, tol: f64) -> Result<f64, MixingError> {
    let n = w.nrows();
    if n < 2 {
        return Err(MixingError::SingleAgent);
    }
    let deflated = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    // fixed, irregular start vector with no special symmetry
    let mut x = DVector::from_fn(n, |i, _| {
        ((i as f64 + 1.0) * 0.754_877_666).sin() + 0.3 * (i as f64 * 1.3).cos()
    });
    let project = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    project(&mut x);
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    x /= norm;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let mut y = &deflated * &x;
        project(&mut y);
        let next = y.norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        x = y / next;
        if (next - estimate).abs() <= tol * next.max(1e-300) {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionRow {
    pub t: usize,
    /// `max_i Σ_j |(W^t)_ij − 1/n|`.
    pub lhs: f64,
    /// `√n μ^t`.
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluate the contraction bound for `t = 1..=t_max`.
pub fn contraction_bound_check(
    w: &MixingMatrix,
    g: &Network,
    t_max: usize,
) -> Result<Vec<ContractionRow>, MixingError> {
    let report = validate_mixing(w.matrix(), g)?;
    if !report.passes() {
        return Err(MixingError::Invalid(report.failures.join("; ")));
    }
    let n = w.n();
    let inv_n = 1.0 / n as f64;
    let sqrt_n = (n as f64).sqrt();
    let mut power = DMatrix::identity(n, n);
    let mut rows = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        power = &power * w.matrix();
        let lhs = (0..n)
            .map(|i| power.row(i).iter().map(|v| (v - inv_n).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let rhs = sqrt_n * w.mu().powi(t as i32);
        rows.push(ContractionRow {
            t,
            lhs,
            rhs,
            holds: lhs <= rhs + BOUND_TOL,
        });
    }
    Ok(rows)
}

/// Parse a matrix from CSV rows (no header).
pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<DMatrix<f64>, MixingError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| MixingError::Csv(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MixingError::Csv(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(MixingError::Csv(format!(
            "expected a square matrix, got {n} rows of lengths {:?}",
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphKind};
    use proptest::prelude::*;

    fn p3() -> Network {
        generate(GraphKind::Path, 3, 0).unwrap()
    }

    #[test]
    fn metropolis_on_p3() {
        let w = metropolis_weights(&p3()).unwrap();
        let expected = [
            [2.0 / 3.0, 1.0 / 3.0, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((w.weight(i, j) - want).abs() < 1e-15);
            }
        }
        // characteristic polynomial (2/3 − λ) λ (λ − 1)
        let eig = symmetric_eigenvalues(w.matrix()).unwrap();
        for (got, want) in eig.iter().zip([1.0, 2.0 / 3.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{eig:?}");
        }
        assert!((w.mu() - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn metropolis_on_k2_and_single_node() {
        let w = metropolis_weights(&generate(GraphKind::Complete, 2, 0).unwrap()).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(2, 2, 0.5));
        let single = metropolis_weights(&generate(GraphKind::Path, 1, 0).unwrap()).unwrap();
        assert_eq!(single.matrix(), &DMatrix::from_element(1, 1, 1.0));
        assert_eq!(spectral_mu(single.matrix()), Err(MixingError::SingleAgent));
    }

    #[test]
    fn uniform_weights() {
        let w = uniform_complete_weights(3).unwrap();
        assert!(w.matrix().iter().all(|&v| v == 1.0 / 3.0));
        assert_eq!(w.mu(), 0.0);
        assert!(spectral_mu(w.matrix()).unwrap().abs() < 1e-12);
        let w2 = uniform_complete_weights(2).unwrap();
        let eig = symmetric_eigenvalues(w2.matrix()).unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-15 && eig[1].abs() < 1e-15);
        let x = DVector::from_vec(vec![3.0, -1.0, 7.0]);
        let y = w.matrix() * &x;
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn lazy_p3_spectrum() {
        let w = lazy_metropolis_weights(&p3()).unwrap();
        let eig = symmetric_eigenvalues(w.matrix()).unwrap();
        for (got, want) in eig.iter().zip([1.0, 5.0 / 6.0, 0.5]) {
            assert!((got - want).abs() < 1e-12, "{eig:?}");
        }
        assert!((w.mu() - 5.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn validation_failures() {
        let g = p3();
        let identity = validate_mixing(&DMatrix::identity(3, 3), &g).unwrap();
        assert!(identity.nonnegative_on_edges && identity.rows_sum_to_one && identity.symmetric);
        assert!(!identity.mu_below_one);
        assert!((identity.mu.unwrap() - 1.0).abs() < 1e-12);

        let mut neg = metropolis_weights(&g).unwrap().matrix().clone();
        neg[(0, 0)] = 1.0;
        neg[(0, 1)] = -0.0 - 1e-3;
        neg[(1, 0)] = -1e-3;
        let report = validate_mixing(&neg, &g).unwrap();
        assert!(!report.nonnegative_on_edges);
        assert!(!report.passes());

        // weight on the non-edge (1,3)
        let mut off = DMatrix::from_element(3, 3, 1.0 / 3.0);
        off[(1, 1)] = 1.0 / 3.0;
        assert!(!validate_mixing(&off, &g).unwrap().nonnegative_on_edges);

        let mut asym = metropolis_weights(&g).unwrap().matrix().clone();
        asym[(0, 1)] += 0.1;
        asym[(0, 0)] -= 0.1;
        let report = validate_mixing(&asym, &g).unwrap();
        assert!(report.rows_sum_to_one && !report.symmetric);
        assert!(matches!(
            spectral_mu(&asym),
            Err(MixingError::Asymmetric { .. })
        ));

        assert!(matches!(
            validate_mixing(&DMatrix::identity(2, 2), &g),
            Err(MixingError::Dimension { .. })
        ));
        assert!(MixingMatrix::custom(DMatrix::identity(3, 3), &g).is_err());
    }

    #[test]
    fn periodic_chain_breaks_assumption() {
        // W = [[0,1],[1,0]] on K2: λ = {1, −1}
        let g = generate(GraphKind::Complete, 2, 0).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let report = validate_mixing(&w, &g).unwrap();
        assert!(!report.mu_below_one);
        assert!((power_iteration_mu(&w, 1000, 1e-14).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_examples() {
        let g = p3();
        let w = metropolis_weights(&g).unwrap();
        let rows = contraction_bound_check(&w, &g, 20).unwrap();
        assert!((rows[0].lhs - 2.0 / 3.0).abs() < 1e-12);
        assert!((rows[0].rhs - 3f64.sqrt() * 2.0 / 3.0).abs() < 1e-10);
        assert!(rows.iter().all(|r| r.holds));
        assert!(rows[19].lhs <= 3f64.sqrt() * (2.0f64 / 3.0).powi(20) + 1e-9);

        let k = generate(GraphKind::Complete, 5, 0).unwrap();
        let u = uniform_complete_weights(5).unwrap();
        for row in contraction_bound_check(&u, &k, 10).unwrap() {
            assert!(row.lhs < 1e-15 && row.rhs == 0.0 && row.holds);
        }
        assert!(
            contraction_bound_check(&MixingMatrix::unchecked(DMatrix::identity(3, 3)), &g, 3)
                .is_err()
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = generate(GraphKind::Grid { rows: None }, 6, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(&back, w.matrix());
        assert!(read_matrix_csv("1,0\n0".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn constructions_satisfy_assumptions(n in 2usize..=12, seed: u64, lazy: bool) {
            let g = generate(GraphKind::ErdosRenyi { p: 0.4 }, n, seed).unwrap();
            let w = if lazy { lazy_metropolis_weights(&g) } else { metropolis_weights(&g) }.unwrap();
            let report = validate_mixing(w.matrix(), &g).unwrap();
            prop_assert!(report.passes(), "{:?}", report.failures);
            let p = w.power(100);
            for i in 0..n {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((p.column(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn eigensolver_agrees_with_power_iteration(n in 2usize..=12, seed: u64, lazy: bool) {
            let g = generate(GraphKind::ErdosRenyi { p: 0.5 }, n, seed).unwrap();
            let w = if lazy { lazy_metropolis_weights(&g) } else { metropolis_weights(&g) }.unwrap();
            let pm = power_iteration_mu(w.matrix(), 200_000, 1e-15).unwrap();
            prop_assert!((pm - w.mu()).abs() < 1e-8, "power {} vs eig {}", pm, w.mu());
        }
    }
}
