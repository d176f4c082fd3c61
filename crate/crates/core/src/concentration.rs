//! Lipschitz contraction, one-step fluctuation moments, and the tail bounds
//! they imply for `p = 1` eigendistances, with Monte Carlo harnesses that
//! compare the bounds against sampled tails.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{sample_rng, simulate_coupled, CouplingOperator};
use crate::eigen::ZERO_REL;
use crate::error::{Error, Result};
use crate::markov::{MarkovChain, PseudoMetric};

/// Curvatures at or below this use the `kappa = 0` forms of the bounds.
pub const KAPPA_ZERO: f64 = 1e-9;

/// Default truncation of the moment series.
pub const N_MAX: usize = 20;

/// Largest acceptable series remainder in [`exp_moment_bound`].
pub const MAX_REMAINDER: f64 = 1e3;

/// Grid of normalized deviations used by the tail reports.
pub const TAIL_GRID: [f64; 10] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];

/// Smallest `L` with `|f(x) - f(y)| <= L rho(x, y)`; infinite when `f`
/// separates two states at distance zero.
pub fn lipschitz_norm(f: &[f64], rho: &PseudoMetric) -> f64 {
    let n = rho.n();
    let floor = ZERO_REL * rho.max_entry();
    let fscale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut best: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            let df = (f[x] - f[y]).abs();
            let d = rho.get(x, y);
            if d > floor {
                best = best.max(df / d);
            } else if df > 1e-12 * fscale {
                return f64::INFINITY;
            }
        }
    }
    best
}

/// `|Pf|_Lip - (1 - kappa) |f|_Lip`.
pub fn contraction_check(chain: &MarkovChain, rho: &PseudoMetric, kappa: f64, f: &[f64]) -> f64 {
    let pf = chain.apply(f);
    lipschitz_norm(&pf, rho) - (1.0 - kappa) * lipschitz_norm(f, rho)
}

/// Largest excess of `|P^t f(x) - P^t f(y)|` over `(1 - kappa)^t |f|_Lip rho(x, y)`
/// for `t = 1..=t_max`.
pub fn iterated_contraction_excess(
    chain: &MarkovChain,
    rho: &PseudoMetric,
    kappa: f64,
    f: &[f64],
    t_max: usize,
) -> f64 {
    let lip = lipschitz_norm(f, rho);
    let n = chain.n();
    let mut g = f.to_vec();
    let mut worst = f64::NEG_INFINITY;
    for t in 1..=t_max {
        g = chain.apply(&g);
        let factor = (1.0 - kappa).powi(t as i32) * lip;
        for x in 0..n {
            for y in x + 1..n {
                worst = worst.max((g[x] - g[y]).abs() - factor * rho.get(x, y));
            }
        }
    }
    worst
}

/// `J = max_x max { rho(x, y) : P(x, y) > 0 }`.
pub fn jump_bound(chain: &MarkovChain, rho: &PseudoMetric) -> f64 {
    let n = chain.n();
    let mut j: f64 = 0.0;
    for x in 0..n {
        for (y, &pxy) in chain.row(x).iter().enumerate() {
            if pxy > 0.0 {
                j = j.max(rho.get(x, y));
            }
        }
    }
    j
}

/// `sigma[m] = max_x sum_z P(x,z) (sum_z' rho(z,z') P(x,z'))^m` for
/// `m = 0..=n_max`.
pub fn sigma_moments(chain: &MarkovChain, rho: &PseudoMetric, n_max: usize) -> Vec<f64> {
    let n = chain.n();
    let mut sigma = vec![0.0f64; n_max + 1];
    for x in 0..n {
        let row = chain.row(x);
        let inner: Vec<f64> = (0..n)
            .map(|z| (0..n).map(|zp| rho.get(z, zp) * row[zp]).sum())
            .collect();
        for (m, s) in sigma.iter_mut().enumerate() {
            let v: f64 = row
                .iter()
                .zip(&inner)
                .filter(|(&pz, _)| pz > 0.0)
                .map(|(&pz, &g)| pz * g.powi(m as i32))
                .sum();
            *s = s.max(v);
        }
    }
    sigma
}

/// Inputs to the moment and tail bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub j: f64,
    /// `sigma[m]` for `m = 0..=n_max`.
    pub sigma: Vec<f64>,
    pub kappa: f64,
    pub p: f64,
    pub lip_norm: Option<f64>,
}

impl ConcentrationParams {
    /// Bounds are stated for `p = 1` eigendistances only.
    pub fn new(
        chain: &MarkovChain,
        rho: &PseudoMetric,
        kappa: f64,
        n_max: usize,
        f: Option<&[f64]>,
    ) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::ParameterRange("n_max must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&kappa) && kappa.abs() > KAPPA_ZERO {
            return Err(Error::ParameterRange(format!(
                "curvature {kappa} outside [0, 1]"
            )));
        }
        if let Some(f) = f {
            if f.len() != chain.n() {
                return Err(Error::DimensionMismatch {
                    expected: chain.n(),
                    actual: f.len(),
                });
            }
        }
        Ok(Self {
            j: jump_bound(chain, rho),
            sigma: sigma_moments(chain, rho, n_max),
            kappa: kappa.max(0.0),
            p: 1.0,
            lip_norm: f.map(|f| lipschitz_norm(f, rho)),
        })
    }

    pub fn n_max(&self) -> usize {
        self.sigma.len() - 1
    }

    /// Largest `sigma[m] / (2J)^m` for `m >= 2`; at most one.
    pub fn sigma_ratio(&self) -> f64 {
        let two_j = 2.0 * self.j;
        self.sigma
            .iter()
            .enumerate()
            .skip(2)
            .map(|(m, &s)| {
                let b = two_j.powi(m as i32);
                if b > 0.0 {
                    s / b
                } else if s > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

fn geometric_factor(kappa: f64, m: usize) -> f64 {
    1.0 - (1.0 - kappa).powi(m as i32)
}

/// Upper bound on `log E_x exp(f(X_T) - E_x f(X_T))` for `|f|_Lip = lip_norm`.
///
/// The series is summed to `n_max`; the tail uses `sigma[m] <= (2J)^m` and
/// the Taylor remainder of `exp`. For `kappa = 0` the sum is multiplied by
/// `T`.
pub fn exp_moment_bound(params: &ConcentrationParams, lip_norm: f64, t: usize) -> Result<f64> {
    let kappa = params.kappa;
    let zero = kappa <= KAPPA_ZERO;
    let n_max = params.n_max();
    let mut sum = 0.0;
    let mut fact = 1.0;
    for m in 1..=n_max {
        fact *= m as f64;
        if m < 2 {
            continue;
        }
        let term = lip_norm.powi(m as i32) * params.sigma[m] / fact;
        sum += if zero {
            term
        } else {
            term / geometric_factor(kappa, m)
        };
    }
    let c = 2.0 * params.j * lip_norm;
    let mut remainder = c.powi(n_max as i32 + 1) / (fact * (n_max as f64 + 1.0)) * c.exp();
    if !zero {
        remainder /= geometric_factor(kappa, n_max + 1);
    }
    if remainder.is_nan() || remainder > MAX_REMAINDER {
        return Err(Error::DivergentTail { remainder });
    }
    let series = sum + remainder;
    Ok(if zero { t as f64 * series } else { series })
}

/// `log E_x exp(lambda (f(X_T) - E_x f(X_T)))`, computed exactly.
pub fn exact_log_mgf(chain: &MarkovChain, f: &[f64], x0: usize, t: usize, lambda: f64) -> f64 {
    let mut mean = f.to_vec();
    for _ in 0..t {
        mean = chain.apply(&mean);
    }
    let shift = f.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(lambda * v));
    let mut g: Vec<f64> = f.iter().map(|&v| (lambda * v - shift).exp()).collect();
    for _ in 0..t {
        g = chain.apply(&g);
    }
    g[x0].ln() + shift - lambda * mean[x0]
}

/// `exp(-r^2 / (2 (alpha + r/3)))`, the tail `P(Z >= r beta)` of a variable
/// with `log E exp(s Z / beta) <= alpha s^2 / (2 (1 - s/3))`.
pub fn bernstein_tail(alpha: f64, r: f64) -> f64 {
    (-0.5 * r * r / (alpha + r / 3.0)).exp()
}

/// Tail bound for `(f(X_T) - E_x f(X_T)) / scale > r`, where `scale` is
/// [`function_tail_scale`].
pub fn function_tail_bound(kappa: f64, t: usize, r: f64) -> f64 {
    if kappa <= KAPPA_ZERO {
        (-r * r / (8.0 + 4.0 * r / (3.0 * (t as f64).sqrt()))).exp()
    } else {
        (-r * r / (8.0 / (kappa * (2.0 - kappa)) + 4.0 * r / 3.0)).exp()
    }
}

/// `|f|_Lip J`, times `sqrt(T)` when `kappa = 0`.
pub fn function_tail_scale(lip_norm: f64, j: f64, kappa: f64, t: usize) -> f64 {
    let base = lip_norm * j;
    if kappa <= KAPPA_ZERO {
        base * (t as f64).sqrt()
    } else {
        base
    }
}

/// Tail bound for `|rho(X_T, Y_T) - (1 - kappa)^T rho(x, y)| >= J r` under
/// the coupling. May exceed one.
pub fn distance_tail_bound(kappa: f64, t: usize, r: f64) -> f64 {
    let denom = if kappa <= KAPPA_ZERO {
        64.0 * t as f64
    } else {
        64.0 / (kappa * (2.0 - kappa))
    };
    2.0 * (-r * r / (denom + 8.0 * r / 3.0)).exp()
}

/// Empirical exceedance frequencies against a bound on a grid of `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub r: Vec<f64>,
    pub empirical: Vec<f64>,
    /// Capped at one.
    pub bound: Vec<f64>,
    pub mc_stderr: Vec<f64>,
}

impl TailReport {
    fn from_exceedances(
        grid: &[f64],
        deviations: &[f64],
        bound: impl Fn(f64) -> f64,
        strict: bool,
    ) -> Self {
        let s = deviations.len() as f64;
        let mut empirical = Vec::with_capacity(grid.len());
        let mut mc_stderr = Vec::with_capacity(grid.len());
        for &r in grid {
            let hits = deviations
                .iter()
                .filter(|&&d| if strict { d > r } else { d >= r })
                .count() as f64;
            let freq = hits / s;
            empirical.push(freq);
            mc_stderr.push((freq * (1.0 - freq) / s).sqrt());
        }
        Self {
            r: grid.to_vec(),
            empirical,
            bound: grid.iter().map(|&r| bound(r).min(1.0)).collect(),
            mc_stderr,
        }
    }

    /// Largest `empirical - bound - sigmas * mc_stderr`; non-positive when
    /// the bound dominates.
    pub fn worst_excess(&self, sigmas: f64) -> f64 {
        self.empirical
            .iter()
            .zip(&self.bound)
            .zip(&self.mc_stderr)
            .map(|((e, b), s)| e - b - sigmas * s)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dominated(&self, sigmas: f64) -> bool {
        self.worst_excess(sigmas) <= 0.0
    }
}

/// Samples `X_T` from `x0`, records `(f(X_T) - E_x f(X_T)) / scale` with the
/// mean computed exactly, and compares exceedances of [`TAIL_GRID`] with
/// [`function_tail_bound`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_function_tail(
    chain: &MarkovChain,
    f: &[f64],
    rho: &PseudoMetric,
    kappa: f64,
    x0: usize,
    t: usize,
    samples: usize,
    seed: u64,
) -> Result<TailReport> {
    let n = chain.n();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: f.len(),
        });
    }
    if x0 >= n || t == 0 || samples == 0 {
        return Err(Error::ParameterRange(
            "need a valid start, at least one step, and one sample".into(),
        ));
    }
    let lip = lipschitz_norm(f, rho);
    if !lip.is_finite() {
        return Err(Error::ParameterRange("f is not rho-Lipschitz".into()));
    }
    let scale = function_tail_scale(lip, jump_bound(chain, rho), kappa, t);
    let mut mean = f.to_vec();
    for _ in 0..t {
        mean = chain.apply(&mean);
    }
    let cdfs: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut acc = 0.0;
            chain
                .row(x)
                .iter()
                .map(|&v| {
                    acc += v;
                    acc
                })
                .collect()
        })
        .collect();
    let deviations: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let mut x = x0;
            for _ in 0..t {
                let cdf = &cdfs[x];
                let u: f64 = rng.gen::<f64>() * cdf[n - 1];
                x = cdf.partition_point(|&c| c <= u).min(n - 1);
            }
            let d = f[x] - mean[x0];
            if scale > 0.0 {
                d / scale
            } else {
                0.0
            }
        })
        .collect();
    Ok(TailReport::from_exceedances(
        &TAIL_GRID,
        &deviations,
        |r| function_tail_bound(kappa, t, r),
        true,
    ))
}

/// Runs the coupling from `(x0, y0)` and compares exceedances of
/// `|rho(X_T, Y_T) - (1 - kappa)^T rho(x0, y0)| >= J r` with
/// [`distance_tail_bound`]. The coupling must be for `p = 1`.
pub fn simulate_distance_tail(
    chain: &MarkovChain,
    coupling: &CouplingOperator,
    x0: usize,
    y0: usize,
    t: usize,
    samples: usize,
    seed: u64,
) -> Result<TailReport> {
    if coupling.p != 1.0 {
        return Err(Error::ParameterRange("distance tails need p = 1".into()));
    }
    let rho = &coupling.rho;
    let j = jump_bound(chain, rho);
    let kappa = coupling.kappa;
    let sim = simulate_coupled(coupling, x0, y0, t, samples, seed)?;
    let center = (1.0 - kappa).powi(t as i32) * rho.get(x0, y0);
    let deviations: Vec<f64> = sim
        .final_rho
        .iter()
        .map(|&d| if j > 0.0 { (d - center).abs() / j } else { 0.0 })
        .collect();
    Ok(TailReport::from_exceedances(
        &TAIL_GRID,
        &deviations,
        |r| distance_tail_bound(kappa, t, r),
        false,
    ))
}
