//! Exact discrete optimal transport.
//!
//! The solver is a transportation (network) simplex on the complete bipartite
//! graph between the supports of `mu` and `nu`. The initial basis comes from
//! the northwest-corner rule; pivots follow Bland's rule (lowest-index
//! entering cell, lowest-index leaving cell among ratio-test ties), so the
//! result is a deterministic optimal basic solution together with dual
//! potentials that certify it.
//!
//! Zero-mass atoms are dropped before solving and reinserted afterwards as
//! zero rows/columns with potentials chosen to keep the dual feasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Marginals must sum to one within this slack.
pub const MASS_TOL: f64 = 1e-12;

/// One instance of the discrete transportation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportInstance {
    mu: Vec<f64>,
    nu: Vec<f64>,
    cost: Matrix,
}

impl TransportInstance {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>, cost: Matrix) -> Result<Self> {
        if cost.rows() != mu.len() || cost.cols() != nu.len() {
            return Err(Error::InvalidInstance(format!(
                "cost is {}x{} but marginals have lengths {} and {}",
                cost.rows(),
                cost.cols(),
                mu.len(),
                nu.len()
            )));
        }
        for (name, w) in [("mu", &mu), ("nu", &nu)] {
            if w.is_empty() {
                return Err(Error::InvalidInstance(format!("{name} is empty")));
            }
            if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "{name} has a negative or non-finite weight"
                )));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidInstance(format!("{name} sums to {s}")));
            }
        }
        if cost.as_slice().iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidInstance(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { mu, nu, cost })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }
}

/// An optimal basic solution with its dual certificate.
///
/// The plan is stored as the list of basic cells `(i, j, mass)`; cells not
/// listed carry zero mass. Zero-mass basic cells are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<(usize, usize, f64)>,
    pub value: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for &(i, j, mass) in &self.cells {
            m[(i, j)] += mass;
        }
        m
    }

    /// Cells carrying strictly positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cells.iter().copied().filter(|c| c.2 > 0.0)
    }

    /// Dual objective `sum mu u + sum nu v`.
    pub fn dual_value(&self, mu: &[f64], nu: &[f64]) -> f64 {
        dot(mu, &self.u) + dot(nu, &self.v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `min sum pi(i,j) cost(i,j)` over couplings of `mu` and `nu`.
pub fn solve_transport(instance: &TransportInstance) -> Result<TransportPlan> {
    let cost = &instance.cost;
    solve_with(&instance.mu, &instance.nu, |i, j| cost[(i, j)])
}

/// Solver entry point taking the cost as a closure over full indices.
/// Marginals are assumed validated.
#[allow(clippy::needless_range_loop)]
pub(crate) fn solve_with(
    mu: &[f64],
    nu: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<TransportPlan> {
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidInstance("a marginal has no mass".into()));
    }
    let a: Vec<f64> = rows.iter().map(|&i| mu[i]).collect();
    let mut b: Vec<f64> = cols.iter().map(|&j| nu[j]).collect();
    // Absorb the (validated, tiny) imbalance into the demands.
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sa != sb {
        let s = sa / sb;
        b.iter_mut().for_each(|v| *v *= s);
    }
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();

    let reduced = NetworkSimplex::new(&a, &b, c).run()?;

    // Reinsert zero-mass atoms with dual-feasible potentials.
    let (m_full, k_full) = (mu.len(), nu.len());
    let mut u = vec![f64::NAN; m_full];
    let mut v = vec![f64::NAN; k_full];
    for (r, &i) in rows.iter().enumerate() {
        u[i] = reduced.u[r];
    }
    for (s, &j) in cols.iter().enumerate() {
        v[j] = reduced.v[s];
    }
    for j in 0..k_full {
        if v[j].is_nan() {
            v[j] = rows
                .iter()
                .map(|&i| cost(i, j) - u[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for i in 0..m_full {
        if u[i].is_nan() {
            u[i] = (0..k_full)
                .map(|j| cost(i, j) - v[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    let cells: Vec<(usize, usize, f64)> = reduced
        .cells
        .iter()
        .map(|&(r, s, mass)| (rows[r], cols[s], mass))
        .collect();
    let value = cells.iter().map(|&(i, j, mass)| mass * cost(i, j)).sum();
    Ok(TransportPlan {
        rows: m_full,
        cols: k_full,
        cells,
        value,
        u,
        v,
        pivots: reduced.pivots,
    })
}

struct Reduced {
    cells: Vec<(usize, usize, f64)>,
    u: Vec<f64>,
    v: Vec<f64>,
    pivots: usize,
}

/// Transportation simplex on an `m x k` problem with strictly positive
/// supplies and demands. Nodes `0..m` are rows, `m..m+k` columns.
struct NetworkSimplex {
    m: usize,
    k: usize,
    cost: Vec<f64>,
    /// Basic cells as `(row, col)`; always `m + k - 1` of them.
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// Cell index -> position in `basis`.
    slot: Vec<Option<usize>>,
    eps: f64,
}

impl NetworkSimplex {
    fn new(a: &[f64], b: &[f64], cost: Vec<f64>) -> Self {
        let (m, k) = (a.len(), b.len());
        let scale = cost.iter().copied().fold(1.0, f64::max);
        let mut s = Self {
            m,
            k,
            cost,
            basis: Vec::with_capacity(m + k - 1),
            flow: Vec::with_capacity(m + k - 1),
            slot: vec![None; m * k],
            eps: 1e-12 * scale,
        };
        s.northwest_corner(a, b);
        s
    }

    fn northwest_corner(&mut self, a: &[f64], b: &[f64]) {
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]);
            ra[i] -= x;
            rb[j] -= x;
            self.slot[i * self.k + j] = Some(self.basis.len());
            self.basis.push((i, j));
            self.flow.push(x);
            if i == self.m - 1 && j == self.k - 1 {
                break;
            }
            if j == self.k - 1 || (i < self.m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(self.basis.len(), self.m + self.k - 1);
    }

    /// Spanning-tree BFS from row 0: parent node, parent slot and depth of
    /// every node, plus the dual potentials `u_i + v_j = c_ij` on the tree.
    fn tree(&self) -> Tree {
        let nodes = self.m + self.k;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (s, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, s));
            adj[self.m + j].push((i, s));
        }
        let mut tree = Tree {
            parent: vec![usize::MAX; nodes],
            parent_slot: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            pot: vec![0.0; nodes],
        };
        let mut seen = vec![false; nodes];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for &(next, s) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j) = self.basis[s];
                let c = self.cost[i * self.k + j];
                // u_i + v_j = c_ij
                tree.pot[next] = c - tree.pot[node];
                tree.parent[next] = node;
                tree.parent_slot[next] = s;
                tree.depth[next] = tree.depth[node] + 1;
                queue.push_back(next);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not spanning");
        tree
    }

    fn run(mut self) -> Result<Reduced> {
        let cap = 10 * self.m * self.k + 1000;
        let mut pivots = 0;
        loop {
            let tree = self.tree();
            let entering = (0..self.m * self.k).find(|&cell| {
                if self.slot[cell].is_some() {
                    return false;
                }
                let (i, j) = (cell / self.k, cell % self.k);
                self.cost[cell] - tree.pot[i] - tree.pot[self.m + j] < -self.eps
            });
            let Some(entering) = entering else {
                let cells = self
                    .basis
                    .iter()
                    .zip(&self.flow)
                    .map(|(&(i, j), &f)| (i, j, f))
                    .collect();
                return Ok(Reduced {
                    cells,
                    u: tree.pot[..self.m].to_vec(),
                    v: tree.pot[self.m..].to_vec(),
                    pivots,
                });
            };
            if pivots >= cap {
                return Err(Error::NumericalFailure { iterations: pivots });
            }
            pivots += 1;
            self.pivot(entering, &tree);
        }
    }

    fn pivot(&mut self, entering: usize, tree: &Tree) {
        let (ei, ej) = (entering / self.k, entering % self.k);
        // Tree path from column ej to row ei; arcs alternate -, +, -, ...
        // starting at the column end.
        let (mut a, mut b) = (self.m + ej, ei);
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        while a != b {
            if tree.depth[a] >= tree.depth[b] {
                from_col.push(tree.parent_slot[a]);
                a = tree.parent[a];
            } else {
                from_row.push(tree.parent_slot[b]);
                b = tree.parent[b];
            }
        }
        let path: Vec<usize> = from_col
            .into_iter()
            .chain(from_row.into_iter().rev())
            .collect();

        let mut leave: Option<(usize, f64, usize)> = None; // (slot, flow, cell)
        for &s in path.iter().step_by(2) {
            let (i, j) = self.basis[s];
            let cell = i * self.k + j;
            let f = self.flow[s];
            let better = match leave {
                None => true,
                Some((_, lf, lc)) => f < lf || (f == lf && cell < lc),
            };
            if better {
                leave = Some((s, f, cell));
            }
        }
        let (leave_slot, theta, leave_cell) = leave.expect("cycle has a backward arc");
        for (idx, &s) in path.iter().enumerate() {
            if idx % 2 == 0 {
                self.flow[s] = (self.flow[s] - theta).max(0.0);
            } else {
                self.flow[s] += theta;
            }
        }
        self.slot[leave_cell] = None;
        self.basis[leave_slot] = (ei, ej);
        self.flow[leave_slot] = theta;
        self.slot[entering] = Some(leave_slot);
    }
}

struct Tree {
    parent: Vec<usize>,
    parent_slot: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

/// Optimality diagnostics for a plan against an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCheck {
    /// Largest deviation of a row or column sum from its marginal.
    pub marginal_err: f64,
    /// `|primal - dual|` objective gap.
    pub duality_gap: f64,
    /// `max(0, max u_i + v_j - c_ij)`.
    pub dual_infeasibility: f64,
    /// Largest `|u_i + v_j - c_ij|` over cells with positive mass.
    pub slackness: f64,
}

impl PlanCheck {
    pub fn within(&self, tol: f64) -> bool {
        self.marginal_err <= tol
            && self.duality_gap <= tol
            && self.dual_infeasibility <= tol
            && self.slackness <= tol
    }
}

/// Marginal error, duality gap and dual certificates of `plan`.
pub fn verify_plan(plan: &TransportPlan, instance: &TransportInstance) -> PlanCheck {
    let dense = plan.dense();
    let (m, k) = (instance.mu.len(), instance.nu.len());
    assert_eq!((dense.rows(), dense.cols()), (m, k), "plan shape mismatch");
    let mut marginal_err: f64 = 0.0;
    for i in 0..m {
        let s: f64 = dense.row(i).iter().sum();
        marginal_err = marginal_err.max((s - instance.mu[i]).abs());
    }
    for j in 0..k {
        let s: f64 = (0..m).map(|i| dense[(i, j)]).sum();
        marginal_err = marginal_err.max((s - instance.nu[j]).abs());
    }
    let primal: f64 = (0..m)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| dense[(i, j)] * instance.cost[(i, j)])
        .sum();
    let dual = plan.dual_value(&instance.mu, &instance.nu);
    let mut dual_infeasibility: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    for i in 0..m {
        for j in 0..k {
            let r = plan.u[i] + plan.v[j] - instance.cost[(i, j)];
            dual_infeasibility = dual_infeasibility.max(r);
            if dense[(i, j)] > 0.0 {
                slackness = slackness.max(r.abs());
            }
        }
    }
    PlanCheck {
        marginal_err,
        duality_gap: (primal - dual).abs(),
        dual_infeasibility,
        slackness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap_cost() -> Matrix {
        Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])
    }

    #[test]
    fn point_masses_force_the_plan() {
        let inst = TransportInstance::new(vec![1.0, 0.0], vec![0.0, 1.0], swap_cost()).unwrap();
        let plan = solve_transport(&inst).unwrap();
        assert_eq!(plan.value, 1.0);
        assert_eq!(plan.dense()[(0, 1)], 1.0);
        assert!(verify_plan(&plan, &inst).within(1e-12));
    }

    #[test]
    fn equal_marginals_cost_nothing() {
        let mu = vec![0.2, 0.3, 0.5];
        let cost = Matrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ]);
        let inst = TransportInstance::new(mu.clone(), mu, cost).unwrap();
        let plan = solve_transport(&inst).unwrap();
        assert!(plan.value.abs() < 1e-15);
        let dense = plan.dense();
        for i in 0..3 {
            assert!((dense[(i, i)] - inst.mu()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn two_by_two_polytope_minimum() {
        // The polytope is pi(0,0) = t in [0.1, 0.4] with cost 1.1 - 2t; its
        // two vertices give 0.9 and 0.3.
        let inst = TransportInstance::new(vec![0.7, 0.3], vec![0.4, 0.6], swap_cost()).unwrap();
        let plan = solve_transport(&inst).unwrap();
        assert!((plan.value - 0.3).abs() < 1e-15);
        assert!(verify_plan(&plan, &inst).within(1e-12));
    }

    #[test]
    fn infeasible_plan_reports_marginal_error() {
        let inst = TransportInstance::new(vec![0.5, 0.5], vec![0.5, 0.5], swap_cost()).unwrap();
        let bad = TransportPlan {
            rows: 2,
            cols: 2,
            cells: vec![(0, 0, 0.6), (1, 1, 0.5)],
            value: 0.0,
            u: vec![0.0; 2],
            v: vec![0.0; 2],
            pivots: 0,
        };
        let check = verify_plan(&bad, &inst);
        assert!((check.marginal_err - 0.1).abs() < 1e-15);
    }

    #[test]
    fn diagonal_plan_with_zero_duals_has_no_gap() {
        let inst = TransportInstance::new(vec![0.5, 0.5], vec![0.5, 0.5], swap_cost()).unwrap();
        let diag = TransportPlan {
            rows: 2,
            cols: 2,
            cells: vec![(0, 0, 0.5), (1, 1, 0.5)],
            value: 0.0,
            u: vec![0.0; 2],
            v: vec![0.0; 2],
            pivots: 0,
        };
        let check = verify_plan(&diag, &inst);
        assert_eq!(check.duality_gap, 0.0);
        assert_eq!(check.dual_infeasibility, 0.0);
    }

    #[test]
    fn zero_atoms_are_reinserted_with_feasible_duals() {
        let cost = Matrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let inst =
            TransportInstance::new(vec![0.0, 0.5, 0.5, 0.0], vec![0.25, 0.0, 0.0, 0.75], cost)
                .unwrap();
        let plan = solve_transport(&inst).unwrap();
        let check = verify_plan(&plan, &inst);
        assert!(check.within(1e-12), "{check:?}");
        // 0.25 from 1 to 0, 0.25 from 1 to 3, 0.5 from 2 to 3.
        assert!((plan.value - (0.25 + 0.5 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn invalid_instances_are_rejected() {
        assert!(TransportInstance::new(vec![0.5], vec![1.0], Matrix::zeros(1, 1)).is_err());
        assert!(TransportInstance::new(vec![1.0], vec![1.0], Matrix::zeros(2, 1)).is_err());
        let neg = Matrix::from_rows(&[vec![-1.0]]);
        assert!(TransportInstance::new(vec![1.0], vec![1.0], neg).is_err());
    }

    #[test]
    fn degenerate_uniform_instances_terminate() {
        // Many ties in both the ratio test and reduced costs.
        for n in 1..8 {
            let w = vec![1.0 / n as f64; n];
            let cost = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
            let mut mu = w.clone();
            let s: f64 = mu.iter().sum();
            mu[0] += 1.0 - s;
            let inst = TransportInstance::new(mu.clone(), mu, cost).unwrap();
            let plan = solve_transport(&inst).unwrap();
            assert!(plan.value.abs() < 1e-15);
            assert!(verify_plan(&plan, &inst).within(1e-12));
        }
    }
}
