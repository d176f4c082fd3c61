//! Markovian couplings realizing an eigendistance.
//!
//! The kernel from an ordered pair `(x, y)` is an optimal plan between `P^x`
//! and `P^y` for the cost `rho^p`, so
//! `sum kernel(x,y)(u,v) rho(u,v)^p = (1 - kappa)^p rho(x,y)^p`.

use std::collections::BTreeMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::EigendistanceResult;
use crate::error::{Error, Result};
use crate::markov::{MarkovChain, PseudoMetric, Tolerances};
use crate::wasserstein::{apply_w, WpResult};

/// Kernel masses at or below this are treated as structural zeros.
pub const REACH_TOL: f64 = 1e-14;

/// One transition `(u, v, mass)` of the pair chain.
pub type PairMove = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperator {
    n: usize,
    /// Row-major over ordered pairs: `kernel[x * n + y]`.
    kernel: Vec<Vec<PairMove>>,
    pub kappa: f64,
    pub p: f64,
    pub rho: PseudoMetric,
    /// Worst `|sum kernel rho^p - (1 - kappa)^p rho^p|` over ordered pairs.
    pub relation_error: f64,
    /// Worst marginal error over ordered pairs.
    pub marginal_error: f64,
}

impl CouplingOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self, x: usize, y: usize) -> &[PairMove] {
        &self.kernel[x * self.n + y]
    }

    /// Whether `kernel(x,y)(A) = kernel(y,x)(A^T)` for every pair.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n;
        (0..n).all(|x| {
            (x..n).all(|y| {
                let forward = merged(self.kernel(x, y).iter().copied());
                let backward = merged(self.kernel(y, x).iter().map(|&(u, v, m)| (v, u, m)));
                same_support(&forward, &backward, tol)
            })
        })
    }

    /// Sparse export as `{from, to, mass}` records.
    pub fn records(&self) -> Vec<CouplingRecord> {
        let n = self.n;
        let mut out = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for &(u, v, mass) in self.kernel(x, y) {
                    out.push(CouplingRecord {
                        from: [x, y],
                        to: [u, v],
                        mass,
                    });
                }
            }
        }
        out
    }

    /// Kernel masses never leave `set` (pairs with mass above [`REACH_TOL`]).
    pub fn is_invariant(&self, set: impl Fn(usize, usize) -> bool) -> bool {
        let n = self.n;
        (0..n).all(|x| {
            (0..n).all(|y| {
                !set(x, y)
                    || self
                        .kernel(x, y)
                        .iter()
                        .all(|&(u, v, m)| m <= REACH_TOL || set(u, v))
            })
        })
    }

    fn check_invariants(
        &mut self,
        chain: &MarkovChain,
        tol: &Tolerances,
        slack: f64,
    ) -> Result<()> {
        let n = self.n;
        let target = (1.0 - self.kappa).powf(self.p);
        let mut worst_marg = (0.0, 0, 0);
        let mut worst_rel = (0.0, 0, 0);
        for x in 0..n {
            for y in 0..n {
                let mut first = vec![0.0; n];
                let mut second = vec![0.0; n];
                let mut value = 0.0;
                for &(u, v, m) in self.kernel(x, y) {
                    first[u] += m;
                    second[v] += m;
                    value += m * self.rho.get(u, v).powf(self.p);
                }
                let marg = first
                    .iter()
                    .zip(chain.row(x))
                    .chain(second.iter().zip(chain.row(y)))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if marg > worst_marg.0 {
                    worst_marg = (marg, x, y);
                }
                let rel = (value - target * self.rho.get(x, y).powf(self.p)).abs();
                if rel > worst_rel.0 {
                    worst_rel = (rel, x, y);
                }
            }
        }
        self.marginal_error = worst_marg.0;
        self.relation_error = worst_rel.0;
        if worst_marg.0 > tol.ot_tol {
            return Err(Error::MarginalViolation {
                x: worst_marg.1,
                y: worst_marg.2,
                error: worst_marg.0,
            });
        }
        if worst_rel.0 > tol.fp_tol + slack {
            return Err(Error::EigenrelationViolation {
                x: worst_rel.1,
                y: worst_rel.2,
                error: worst_rel.0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub from: [usize; 2],
    pub to: [usize; 2],
    pub mass: f64,
}

fn merged(moves: impl Iterator<Item = PairMove>) -> BTreeMap<(usize, usize), f64> {
    let mut map = BTreeMap::new();
    for (u, v, m) in moves {
        *map.entry((u, v)).or_insert(0.0) += m;
    }
    map
}

fn same_support(
    a: &BTreeMap<(usize, usize), f64>,
    b: &BTreeMap<(usize, usize), f64>,
    tol: f64,
) -> bool {
    a.iter()
        .all(|(k, &m)| (m - b.get(k).copied().unwrap_or(0.0)).abs() <= tol)
        && b.iter()
            .all(|(k, &m)| (m - a.get(k).copied().unwrap_or(0.0)).abs() <= tol)
}

/// Slack on `W^p` implied by a residual `e` on `W`: with `rho <= 1`,
/// `|a^p - b^p| <= p (1 + e)^(p-1) e` for `|a - b| <= e`.
fn relation_slack(p: f64, residual: f64) -> f64 {
    p * (1.0 + residual).powf(p - 1.0) * residual
}

/// Builds the coupling from the plans of `W_p(eig.rho)`.
///
/// `w` must come from [`apply_w`] on `eig.rho` with `keep_plans = true`.
/// The relation is checked at `fp_tol` plus the slack implied by the
/// residual of `eig`.
pub fn extract_coupling(
    chain: &MarkovChain,
    eig: &EigendistanceResult,
    w: &WpResult,
    tol: &Tolerances,
) -> Result<CouplingOperator> {
    let n = chain.n();
    let plans = match &w.plans {
        Some(p) if p.n() == n => p,
        _ => return Err(Error::MissingPlans { x: 0, y: n.min(1) }),
    };
    let mut kernel = vec![Vec::new(); n * n];
    for x in 0..n {
        kernel[x * n + x] = chain
            .row(x)
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m > 0.0)
            .map(|(z, &m)| (z, z, m))
            .collect();
        for y in x + 1..n {
            let plan = plans.get(x, y).ok_or(Error::MissingPlans { x, y })?;
            let forward: Vec<PairMove> = plan.support().filter(|m| m.2 > 0.0).collect();
            kernel[y * n + x] = forward.iter().map(|&(u, v, m)| (v, u, m)).collect();
            kernel[x * n + y] = forward;
        }
    }
    let mut op = CouplingOperator {
        n,
        kernel,
        kappa: eig.kappa,
        p: eig.p,
        rho: eig.rho.clone(),
        relation_error: 0.0,
        marginal_error: 0.0,
    };
    op.check_invariants(chain, tol, relation_slack(eig.p, eig.residual))?;
    Ok(op)
}

/// Solves `W_p(eig.rho)` with plans and extracts the coupling.
pub fn coupling_for(
    chain: &MarkovChain,
    eig: &EigendistanceResult,
    tol: &Tolerances,
) -> Result<CouplingOperator> {
    let w = apply_w(chain, &eig.rho, eig.p, true, tol)?;
    extract_coupling(chain, eig, &w, tol)
}

/// `Q(x,y)(u,v) = (kernel(x,y)(u,v) + kernel(y,x)(v,u)) / 2`.
pub fn symmetrize(coupling: &CouplingOperator) -> CouplingOperator {
    let n = coupling.n;
    let mut kernel = vec![Vec::new(); n * n];
    for x in 0..n {
        for y in 0..n {
            let map = merged(
                coupling
                    .kernel(x, y)
                    .iter()
                    .map(|&(u, v, m)| (u, v, 0.5 * m))
                    .chain(
                        coupling
                            .kernel(y, x)
                            .iter()
                            .map(|&(u, v, m)| (v, u, 0.5 * m)),
                    ),
            );
            kernel[x * n + y] = map.into_iter().map(|((u, v), m)| (u, v, m)).collect();
        }
    }
    let mut out = CouplingOperator {
        kernel,
        ..coupling.clone()
    };
    out.relation_error = relation_error(&out);
    out
}

fn relation_error(c: &CouplingOperator) -> f64 {
    let n = c.n;
    let target = (1.0 - c.kappa).powf(c.p);
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let value: f64 = c
                .kernel(x, y)
                .iter()
                .map(|&(u, v, m)| m * c.rho.get(u, v).powf(c.p))
                .sum();
            worst = worst.max((value - target * c.rho.get(x, y).powf(c.p)).abs());
        }
    }
    worst
}

/// Communicating classes of the pair chain on unordered off-diagonal pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Irreducibility {
    /// One class contains every off-diagonal pair.
    pub irreducible: bool,
    /// Strongly connected classes, each sorted, ordered by first pair.
    pub classes: Vec<Vec<(usize, usize)>>,
}

/// Reachability between unordered off-diagonal pairs `{x, y}` under the
/// kernel; the diagonal is absorbing and excluded.
pub fn coupling_irreducible(coupling: &CouplingOperator) -> Irreducibility {
    let n = coupling.n;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
        .collect();
    let index = |x: usize, y: usize| {
        let (a, b) = (x.min(y), x.max(y));
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    };
    let mut graph = DiGraph::<(), ()>::with_capacity(pairs.len(), 0);
    let nodes: Vec<_> = pairs.iter().map(|_| graph.add_node(())).collect();
    for (i, &(x, y)) in pairs.iter().enumerate() {
        let mut targets: Vec<usize> = coupling
            .kernel(x, y)
            .iter()
            .chain(coupling.kernel(y, x))
            .filter(|&&(u, v, m)| m > REACH_TOL && u != v)
            .map(|&(u, v, _)| index(u, v))
            .collect();
        targets.sort_unstable();
        targets.dedup();
        for t in targets {
            graph.add_edge(nodes[i], nodes[t], ());
        }
    }
    let mut classes: Vec<Vec<(usize, usize)>> = tarjan_scc(&graph)
        .into_iter()
        .map(|scc| {
            let mut c: Vec<(usize, usize)> = scc.into_iter().map(|v| pairs[v.index()]).collect();
            c.sort_unstable();
            c
        })
        .collect();
    classes.sort_unstable();
    Irreducibility {
        irreducible: classes.len() == 1,
        classes,
    }
}

/// Monte Carlo run of the pair chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSimulation {
    /// Estimate of `E rho^p(X_t, Y_t)` for `t = 0..=T`.
    pub mean_rho_p: Vec<f64>,
    /// Standard error of each entry of `mean_rho_p`.
    pub stderr: Vec<f64>,
    /// `rho(X_T, Y_T)` for every sample.
    pub final_rho: Vec<f64>,
    /// Counts of `rho(X_T, Y_T)` over `bins` equal bins of `[0, max rho]`.
    pub histogram: Vec<usize>,
}

/// Decorrelates per-sample seeds.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(i as u64)))
}

pub const HISTOGRAM_BINS: usize = 20;

/// Runs `samples` independent copies of the pair chain from `(x0, y0)` for
/// `t_max` steps. Samples run in parallel with per-sample seeds, so the
/// output depends only on `seed`.
pub fn simulate_coupled(
    coupling: &CouplingOperator,
    x0: usize,
    y0: usize,
    t_max: usize,
    samples: usize,
    seed: u64,
) -> Result<CoupledSimulation> {
    let n = coupling.n;
    if x0 >= n || y0 >= n {
        return Err(Error::ParameterRange(format!(
            "start ({x0}, {y0}) outside 0..{n}"
        )));
    }
    if t_max == 0 || samples == 0 {
        return Err(Error::ParameterRange(
            "need at least one step and one sample".into(),
        ));
    }
    let cdfs: Vec<Vec<f64>> = coupling
        .kernel
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|&(_, _, m)| {
                    acc += m;
                    acc
                })
                .collect()
        })
        .collect();
    let p = coupling.p;
    let rho = &coupling.rho;
    let paths: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let (mut x, mut y) = (x0, y0);
            let mut path = Vec::with_capacity(t_max + 1);
            path.push(rho.get(x, y));
            for _ in 0..t_max {
                let k = x * n + y;
                let cdf = &cdfs[k];
                let u: f64 = rng.gen::<f64>() * cdf.last().copied().unwrap_or(1.0);
                let j = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let (nx, ny, _) = coupling.kernel[k][j];
                x = nx;
                y = ny;
                path.push(rho.get(x, y));
            }
            path
        })
        .collect();
    let mut mean_rho_p = vec![0.0; t_max + 1];
    let mut stderr = vec![0.0; t_max + 1];
    let s = samples as f64;
    for t in 0..=t_max {
        let vals = paths.iter().map(|path| path[t].powf(p));
        let (sum, sum_sq) = vals.fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
        let mean = sum / s;
        let var = if samples > 1 {
            ((sum_sq - s * mean * mean) / (s - 1.0)).max(0.0)
        } else {
            0.0
        };
        mean_rho_p[t] = mean;
        stderr[t] = (var / s).sqrt();
    }
    let final_rho: Vec<f64> = paths.iter().map(|path| path[t_max]).collect();
    let top = rho.max_entry();
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for &r in &final_rho {
        let bin = if top > 0.0 {
            ((r / top) * HISTOGRAM_BINS as f64) as usize
        } else {
            0
        };
        histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Ok(CoupledSimulation {
        mean_rho_p,
        stderr,
        final_rho,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{certify, iterate_maximal};
    use crate::families::{gamblers_ruin, hamming, lazy_torus, rho_l, spin_flip};

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn identity_chain_coupling_is_trivial() {
        let chain = MarkovChain::identity(3);
        let eig = certify(&chain, &PseudoMetric::indicator(3), 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(c.kernel(x, y), &[(x, y, 1.0)]);
            }
        }
        assert_eq!(symmetrize(&c), c);
        let irr = coupling_irreducible(&c);
        assert!(!irr.irreducible);
        assert_eq!(irr.classes.len(), 3);
    }

    #[test]
    fn torus_coupling_satisfies_relation() {
        let chain = lazy_torus(7, 0.2).unwrap();
        let eig = certify(&chain, &rho_l(7).unwrap(), 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        assert!(c.marginal_error <= 1e-12);
        assert!(c.relation_error <= 1e-10);
        let s = symmetrize(&c);
        assert!(s.is_symmetric(1e-15));
        assert!((s.relation_error - c.relation_error).abs() <= 1e-12);
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn spin_coupling_at_twice_q() {
        let chain = spin_flip(2, 0.1).unwrap();
        let eig = certify(&chain, &hamming(2).unwrap(), 1.0, &tol()).unwrap();
        assert!((eig.kappa - 0.2).abs() < 1e-12);
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        assert!(c.relation_error <= 1e-12);
    }

    #[test]
    fn diagonal_start_stays_at_zero() {
        let chain = lazy_torus(5, 0.2).unwrap();
        let eig = certify(&chain, &rho_l(5).unwrap(), 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        let sim = simulate_coupled(&c, 2, 2, 10, 200, 1).unwrap();
        assert!(sim.mean_rho_p.iter().all(|&v| v == 0.0));
        assert!(sim.final_rho.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulation_is_deterministic() {
        let chain = lazy_torus(7, 0.2).unwrap();
        let eig = certify(&chain, &rho_l(7).unwrap(), 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        let a = simulate_coupled(&c, 0, 1, 5, 500, 42).unwrap();
        let b = simulate_coupled(&c, 0, 1, 5, 500, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.histogram.iter().sum::<usize>(), 500);
    }

    #[test]
    fn ruin_maximal_coupling_is_a_martingale() {
        let chain = gamblers_ruin(5, 0.25).unwrap();
        let eig = iterate_maximal(&chain, 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        let sim = simulate_coupled(&c, 1, 3, 15, 20_000, 9).unwrap();
        let start = sim.mean_rho_p[0];
        for t in 1..=15 {
            assert!((sim.mean_rho_p[t] - start).abs() <= 4.0 * sim.stderr[t] + 1e-12);
        }
    }

    #[test]
    fn missing_plans_rejected() {
        let chain = lazy_torus(5, 0.2).unwrap();
        let eig = certify(&chain, &rho_l(5).unwrap(), 1.0, &tol()).unwrap();
        let w = apply_w(&chain, &eig.rho, 1.0, false, &tol()).unwrap();
        assert!(matches!(
            extract_coupling(&chain, &eig, &w, &tol()),
            Err(Error::MissingPlans { .. })
        ));
    }

    #[test]
    fn records_round_trip() {
        let chain = spin_flip(1, 0.2).unwrap();
        let eig = certify(&chain, &hamming(1).unwrap(), 1.0, &tol()).unwrap();
        let c = coupling_for(&chain, &eig, &tol()).unwrap();
        let recs = c.records();
        let json = serde_json::to_string(&recs).unwrap();
        let back: Vec<CouplingRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, recs);
        assert!(json.contains("\"from\""));
    }
}
