#![allow(dead_code)]

use eigendist_core::{validate_chain, MarkovChain, Matrix, PseudoMetric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector; each atom is zero with probability `zero_p`
/// (at least one atom stays positive).
pub fn random_simplex(rng: &mut ChaCha8Rng, len: usize, zero_p: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < zero_p {
                0.0
            } else {
                rng.gen::<f64>() + 1e-3
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[rng.gen_range(0..len)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|v| v / s).collect();
    // Exact unit sum on the largest atom.
    let big = (0..len).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
    let rest: f64 = out
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != big)
        .map(|(_, v)| v)
        .sum();
    out[big] = 1.0 - rest;
    out
}

/// Random chain; `min_selfloop = 0` gives a generic chain.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize, zero_p: f64) -> MarkovChain {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, n, zero_p)).collect();
    validate_chain(&rows, vec![]).unwrap()
}

/// Shortest-path closure of random symmetric weights: a metric, or a
/// pseudo-metric when some weights are zero.
pub fn random_metric(rng: &mut ChaCha8Rng, n: usize, zero_p: f64) -> PseudoMetric {
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = if rng.gen::<f64>() < zero_p {
                0.0
            } else {
                rng.gen::<f64>() + 0.05
            };
            d[(i, j)] = w;
            d[(j, i)] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    PseudoMetric::new(d).unwrap()
}

/// Minimum of `sum c_ij pi_ij` over all vertices of the transportation
/// polytope, found by enumerating every set of `m + k - 1` cells, solving the
/// marginal equations on it when it is a spanning tree, and keeping the
/// feasible solutions.
pub fn vertex_enumeration_min(mu: &[f64], nu: &[f64], cost: &Matrix) -> f64 {
    let (m, k) = (mu.len(), nu.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let size = m + k - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(size);
    combinations(cells.len(), size, 0, &mut chosen, &mut |subset| {
        let basis: Vec<(usize, usize)> = subset.iter().map(|&c| cells[c]).collect();
        if let Some(flow) = solve_tree(mu, nu, &basis) {
            if flow.iter().all(|&f| f >= -1e-13) {
                let value: f64 = basis
                    .iter()
                    .zip(&flow)
                    .map(|(&(i, j), &f)| f.max(0.0) * cost[(i, j)])
                    .sum();
                best = best.min(value);
            }
        }
    });
    best
}

fn combinations(
    n: usize,
    r: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if chosen.len() == r {
        f(chosen);
        return;
    }
    let need = r - chosen.len();
    for c in start..=n - need {
        chosen.push(c);
        combinations(n, r, c + 1, chosen, f);
        chosen.pop();
    }
}

/// Flow on `basis` meeting the marginals, by repeatedly fixing a cell that is
/// the only unfixed one in its row or column. `None` if the cells contain a
/// cycle (then they are not a basis).
fn solve_tree(mu: &[f64], nu: &[f64], basis: &[(usize, usize)]) -> Option<Vec<f64>> {
    let mut row_left = mu.to_vec();
    let mut col_left = nu.to_vec();
    let mut flow = vec![f64::NAN; basis.len()];
    let mut fixed = 0;
    while fixed < basis.len() {
        let mut progress = false;
        for (c, &(i, j)) in basis.iter().enumerate() {
            if !flow[c].is_nan() {
                continue;
            }
            let row_free = basis
                .iter()
                .enumerate()
                .filter(|&(d, &(a, _))| a == i && flow[d].is_nan())
                .count();
            let col_free = basis
                .iter()
                .enumerate()
                .filter(|&(d, &(_, b))| b == j && flow[d].is_nan())
                .count();
            let value = if row_free == 1 {
                row_left[i]
            } else if col_free == 1 {
                col_left[j]
            } else {
                continue;
            };
            flow[c] = value;
            row_left[i] -= value;
            col_left[j] -= value;
            fixed += 1;
            progress = true;
        }
        if !progress {
            return None;
        }
    }
    let resid = row_left
        .iter()
        .chain(&col_left)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    (resid <= 1e-12).then_some(flow)
}

pub fn max_abs_diff(a: &PseudoMetric, b: &PseudoMetric) -> f64 {
    a.matrix().sup_distance(b.matrix())
}
