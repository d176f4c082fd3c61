//! Finite Markov chains, pseudo-metrics on their state space and the
//! tolerances shared by every numerical routine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row sums of a transition matrix must equal one within this slack.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A row-stochastic transition matrix with state labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    labels: Vec<String>,
    p: Matrix,
}

impl MarkovChain {
    /// Validates `matrix` and wraps it. Empty `labels` means "0", "1", ...
    pub fn new(matrix: Matrix, labels: Vec<String>) -> Result<Self> {
        validate_chain_matrix(&matrix)?;
        let n = matrix.rows();
        let labels = if labels.is_empty() {
            (0..n).map(|i| i.to_string()).collect()
        } else if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: labels.len(),
            });
        } else {
            labels
        };
        Ok(Self { labels, p: matrix })
    }

    /// The identity kernel on `n` states.
    pub fn identity(n: usize) -> Self {
        Self::new(Matrix::identity(n), Vec::new()).expect("identity is stochastic")
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    /// The one-step law `P^x`.
    pub fn row(&self, x: usize) -> &[f64] {
        self.p.row(x)
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.p[(x, y)]
    }

    /// `(Pf)(x) = E_x f(X_1)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.p.mul_vec(f)
    }

    /// Distribution after one step from the distribution `mu`.
    pub fn step_distribution(&self, mu: &[f64]) -> Vec<f64> {
        self.p.vec_mul(mu)
    }
}

fn validate_chain_matrix(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.rows() == 0 {
        return Err(Error::Empty);
    }
    for i in 0..m.rows() {
        let mut sum = 0.0;
        for j in 0..m.cols() {
            let v = m[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowSumViolation {
                row: i,
                deviation: sum - 1.0,
            });
        }
    }
    Ok(())
}

fn square_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::NotSquare {
            rows: n,
            cols: bad.len(),
        });
    }
    Ok(Matrix::from_rows(rows))
}

/// Checks that `rows` is a square row-stochastic matrix.
pub fn validate_chain(rows: &[Vec<f64>], labels: Vec<String>) -> Result<MarkovChain> {
    MarkovChain::new(square_from_rows(rows)?, labels)
}

/// Result of [`check_laziness`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Laziness {
    pub holds: bool,
    pub min_selfloop: f64,
}

/// Whether every state holds with probability strictly above one half, which
/// is sufficient for the non-degeneracy condition used by the existence
/// results.
pub fn check_laziness(chain: &MarkovChain) -> Laziness {
    let min_selfloop = (0..chain.n())
        .map(|x| chain.prob(x, x))
        .fold(f64::INFINITY, f64::min);
    Laziness {
        holds: min_selfloop > 0.5,
        min_selfloop,
    }
}

/// Logs a warning when [`check_laziness`] fails; returns the check.
pub(crate) fn warn_if_not_lazy(chain: &MarkovChain) -> Laziness {
    let lazy = check_laziness(chain);
    if !lazy.holds {
        log::warn!(
            "minimum self-loop probability {} <= 1/2; non-degeneracy is not guaranteed",
            lazy.min_selfloop
        );
    }
    lazy
}

/// Symmetric, nonnegative, zero-diagonal matrix satisfying the triangle
/// inequality up to a relative slack.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMetric {
    d: Matrix,
}

/// Default relative slack for the triangle inequality.
pub const TRIANGLE_TOL: f64 = 1e-9;

impl PseudoMetric {
    /// Validates with the default relative triangle slack.
    pub fn new(d: Matrix) -> Result<Self> {
        Self::with_tolerance(d, TRIANGLE_TOL)
    }

    /// Validates with triangle slack `rel_tol * max entry`. Symmetry and the
    /// diagonal are held to the same slack.
    pub fn with_tolerance(d: Matrix, rel_tol: f64) -> Result<Self> {
        if !d.is_square() {
            return Err(Error::NotSquare {
                rows: d.rows(),
                cols: d.cols(),
            });
        }
        let n = d.rows();
        if n == 0 {
            return Err(Error::Empty);
        }
        for i in 0..n {
            for j in 0..n {
                let v = d[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        let tol = rel_tol * d.max_entry();
        for x in 0..n {
            if d[(x, x)] > tol {
                return Err(Error::NonzeroDiagonal {
                    x,
                    value: d[(x, x)],
                });
            }
            for y in x + 1..n {
                if (d[(x, y)] - d[(y, x)]).abs() > tol {
                    return Err(Error::AsymmetryError {
                        x,
                        y,
                        forward: d[(x, y)],
                        backward: d[(y, x)],
                    });
                }
            }
        }
        if let Some((x, z, y, excess)) = worst_triangle(&d) {
            if excess > tol {
                return Err(Error::TriangleViolation { x, z, y, excess });
            }
        }
        // Snap the tiny asymmetries and diagonal noise away so downstream code
        // can rely on exact symmetry.
        let d = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                0.5 * (d[(i, j)] + d[(j, i)])
            }
        });
        Ok(Self { d })
    }

    /// Wraps a matrix that is a pseudo-metric by construction.
    pub(crate) fn from_trusted(d: Matrix) -> Self {
        debug_assert!(d.is_square());
        Self { d }
    }

    /// The discrete metric `1{x != y}`.
    pub fn indicator(n: usize) -> Self {
        Self::from_trusted(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }))
    }

    pub fn zero(n: usize) -> Self {
        Self::from_trusted(Matrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.d.rows()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.d[(x, y)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.d
    }

    pub fn max_entry(&self) -> f64 {
        self.d.max_entry()
    }

    /// Smallest off-diagonal entry (infinity for a single state).
    pub fn min_off_diagonal(&self) -> f64 {
        let n = self.n();
        let mut m = f64::INFINITY;
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    m = m.min(self.d[(x, y)]);
                }
            }
        }
        m
    }

    /// Positive multiple of the metric.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor >= 0.0 && factor.is_finite());
        Self::from_trusted(self.d.map(|v| v * factor))
    }

    /// Rescaled to have maximal entry one; the zero metric is returned as is.
    pub fn normalized(&self) -> Self {
        let m = self.max_entry();
        if m > 0.0 {
            self.scaled(1.0 / m)
        } else {
            self.clone()
        }
    }

    /// Entrywise power `d^e` for `0 < e <= 1`, which preserves the triangle
    /// inequality.
    pub fn powf(&self, e: f64) -> Self {
        assert!(e > 0.0 && e <= 1.0);
        Self::from_trusted(self.d.map(|v| v.powf(e)))
    }

    /// Entrywise sum with another pseudo-metric.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n(), other.n());
        let n = self.n();
        Self::from_trusted(Matrix::from_fn(n, n, |i, j| {
            self.d[(i, j)] + other.d[(i, j)]
        }))
    }

    /// Whether `self <= other + tol` entrywise.
    pub fn le(&self, other: &Self, tol: f64) -> bool {
        self.d
            .as_slice()
            .iter()
            .zip(other.d.as_slice())
            .all(|(a, b)| *a <= b + tol)
    }
}

/// Returns `(x, z, y, excess)` maximizing `d(x,y) - d(x,z) - d(z,y)`.
pub(crate) fn worst_triangle(d: &Matrix) -> Option<(usize, usize, usize, f64)> {
    let n = d.rows();
    let mut worst: Option<(usize, usize, usize, f64)> = None;
    for x in 0..n {
        for y in 0..n {
            let dxy = d[(x, y)];
            for z in 0..n {
                let excess = dxy - d[(x, z)] - d[(z, y)];
                if worst.is_none_or(|w| excess > w.3) {
                    worst = Some((x, z, y, excess));
                }
            }
        }
    }
    worst
}

/// Checks the pseudo-metric axioms on a square matrix given as rows.
pub fn validate_metric(rows: &[Vec<f64>]) -> Result<PseudoMetric> {
    PseudoMetric::new(square_from_rows(rows)?)
}

/// `alpha(x,y) = 1 - sum_z min(P(x,z), P(y,z))`, the image of `1{x != y}`
/// under `W_1`.
pub fn alpha_metric(chain: &MarkovChain) -> PseudoMetric {
    let n = chain.n();
    let d = Matrix::from_fn(n, n, |x, y| {
        if x == y {
            return 0.0;
        }
        let overlap: f64 = chain
            .row(x)
            .iter()
            .zip(chain.row(y))
            .map(|(a, b)| a.min(*b))
            .sum();
        (1.0 - overlap).max(0.0)
    });
    PseudoMetric::from_trusted(d)
}

/// Numerical tolerances shared by the solvers and iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative slack for the triangle inequality.
    pub metric_tol: f64,
    /// Sup-norm change at which a fixed-point iteration stops.
    pub fp_tol: f64,
    /// Marginal, slackness and duality-gap slack for transport plans.
    pub ot_tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            metric_tol: 1e-9,
            fp_tol: 1e-11,
            ot_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.metric_tol) && positive(self.fp_tol) && positive(self.ot_tol)) {
            return Err(Error::InvalidTolerances(
                "tolerances must be finite and strictly positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidTolerances(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_rows(l: usize, q: f64) -> Vec<Vec<f64>> {
        (0..l)
            .map(|x| {
                let mut row = vec![0.0; l];
                row[x] += 1.0 - 2.0 * q;
                row[(x + 1) % l] += q;
                row[(x + l - 1) % l] += q;
                row
            })
            .collect()
    }

    #[test]
    fn identity_is_valid() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let chain = validate_chain(&rows, vec![]).unwrap();
        assert_eq!(chain.n(), 3);
        assert_eq!(chain.labels(), ["0", "1", "2"]);
    }

    #[test]
    fn lazy_torus_rows_validate() {
        let chain = validate_chain(&torus_rows(5, 0.25), vec![]).unwrap();
        assert_eq!(chain.row(0), &[0.5, 0.25, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn short_row_sum_is_rejected() {
        let rows = vec![vec![0.5, 0.4], vec![0.5, 0.5]];
        match validate_chain(&rows, vec![]) {
            Err(Error::RowSumViolation { row, deviation }) => {
                assert_eq!(row, 0);
                assert!((deviation + 0.1).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_entry_and_shape_errors() {
        let rows = vec![vec![1.5, -0.5], vec![0.5, 0.5]];
        assert!(matches!(
            validate_chain(&rows, vec![]),
            Err(Error::NegativeEntry { row: 0, col: 1, .. })
        ));
        let ragged = vec![vec![1.0, 0.0], vec![1.0]];
        assert!(matches!(
            validate_chain(&ragged, vec![]),
            Err(Error::NotSquare { .. })
        ));
        assert!(matches!(validate_chain(&[], vec![]), Err(Error::Empty)));
        let labels = vec!["a".to_string()];
        assert!(matches!(
            validate_chain(&torus_rows(3, 0.1), labels),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn laziness_boundary_is_strict() {
        let lazy = check_laziness(&validate_chain(&torus_rows(5, 0.2), vec![]).unwrap());
        assert!(lazy.holds);
        assert!((lazy.min_selfloop - 0.6).abs() < 1e-15);

        let edge = check_laziness(&validate_chain(&torus_rows(5, 0.25), vec![]).unwrap());
        assert!(!edge.holds);
        assert_eq!(edge.min_selfloop, 0.5);

        let id = check_laziness(&MarkovChain::identity(4));
        assert!(id.holds);
        assert_eq!(id.min_selfloop, 1.0);
    }

    #[test]
    fn indicator_metric_validates() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        validate_metric(&rows).unwrap();
    }

    #[test]
    fn triangle_violation_reports_witness() {
        let rows = vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ];
        match validate_metric(&rows) {
            Err(Error::TriangleViolation { x, z, y, excess }) => {
                assert_eq!((x.min(y), z, x.max(y)), (0, 1, 2));
                assert!((excess - 1.0).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetry_and_diagonal_errors() {
        let rows = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(matches!(
            validate_metric(&rows),
            Err(Error::AsymmetryError { .. })
        ));
        let rows = vec![vec![0.5, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            validate_metric(&rows),
            Err(Error::NonzeroDiagonal { x: 0, .. })
        ));
    }

    #[test]
    fn sine_metric_satisfies_triangle_inequality() {
        let l = 7;
        let rows: Vec<Vec<f64>> = (0..l)
            .map(|x| {
                (0..l)
                    .map(|y| (((x + l - y) % l) as f64 * std::f64::consts::PI / l as f64).sin())
                    .collect()
            })
            .collect();
        validate_metric(&rows).unwrap();
    }

    #[test]
    fn triangle_tolerance_is_scale_invariant() {
        // Violation of relative size 5e-10 passes at every scale.
        for scale in [1e-6, 1.0, 1e6] {
            let rows = vec![
                vec![0.0, 0.5 * scale, (1.0 + 5e-10) * scale],
                vec![0.5 * scale, 0.0, 0.5 * scale],
                vec![(1.0 + 5e-10) * scale, 0.5 * scale, 0.0],
            ];
            validate_metric(&rows).unwrap();
        }
    }

    #[test]
    fn alpha_metric_overlaps() {
        let rows = vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.2, 0.2, 0.3, 0.3],
        ];
        let chain = validate_chain(&rows, vec![]).unwrap();
        let a = alpha_metric(&chain);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(0, 2), 1.0);
        assert!((a.get(2, 3) - 0.4).abs() < 1e-15);
        PseudoMetric::new(a.matrix().clone()).unwrap();

        let torus = validate_chain(&torus_rows(5, 0.25), vec![]).unwrap();
        let a = alpha_metric(&torus);
        assert!((a.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tolerances_validation() {
        Tolerances::default().validate().unwrap();
        let mut t = Tolerances::default();
        t.max_iter = 0;
        assert!(t.validate().is_err());
        t = Tolerances::default();
        t.fp_tol = 0.0;
        assert!(t.validate().is_err());
    }
}
