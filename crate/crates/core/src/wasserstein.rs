//! The map `W_p` on pseudo-metrics: `W_p(rho)(x,y)` is the p-Wasserstein
//! distance between the one-step laws `P^x` and `P^y` with ground cost `rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{alpha_metric, worst_triangle, MarkovChain, PseudoMetric, Tolerances};
use crate::matrix::Matrix;
use crate::transport::{solve_with, TransportPlan};

/// Optimal plans for every unordered pair `x < y`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct PairPlans {
    n: usize,
    plans: Vec<TransportPlan>,
}

impl PairPlans {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Plan for `P^x` against `P^y`, requiring `x < y`.
    pub fn get(&self, x: usize, y: usize) -> Option<&TransportPlan> {
        (x < y && y < self.n).then(|| &self.plans[pair_index(self.n, x, y)])
    }
}

pub(crate) fn pair_index(n: usize, x: usize, y: usize) -> usize {
    debug_assert!(x < y && y < n);
    x * (2 * n - x - 1) / 2 + (y - x - 1)
}

fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
        .collect()
}

/// Image `W_p(rho)` together with the per-pair plans when requested.
#[derive(Debug, Clone)]
pub struct WpResult {
    pub metric: PseudoMetric,
    pub plans: Option<PairPlans>,
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

pub(crate) fn check_dims(chain: &MarkovChain, rho: &PseudoMetric) -> Result<()> {
    if chain.n() == rho.n() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: chain.n(),
            actual: rho.n(),
        })
    }
}

/// Applies `W_p` to `rho`.
///
/// Every unordered pair is an independent transport solve with cost
/// `rho^p`; pairs run in parallel and the output does not depend on the
/// schedule. The triangle inequality of the image is checked against
/// `tol.metric_tol` and a violation is reported as an error, since it can
/// only come from a faulty solve.
pub fn apply_w(
    chain: &MarkovChain,
    rho: &PseudoMetric,
    p: f64,
    keep_plans: bool,
    tol: &Tolerances,
) -> Result<WpResult> {
    check_exponent(p)?;
    check_dims(chain, rho)?;
    let n = chain.n();
    let cost = if p == 1.0 {
        rho.matrix().clone()
    } else {
        rho.matrix().map(|v| v.powf(p))
    };
    let pairs = unordered_pairs(n);
    let solved: Vec<Result<TransportPlan>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            solve_with(chain.row(x), chain.row(y), |i, j| cost[(i, j)]).map_err(|e| {
                Error::PairSolve {
                    x,
                    y,
                    source: Box::new(e),
                }
            })
        })
        .collect();
    let plans = solved.into_iter().collect::<Result<Vec<_>>>()?;

    let mut out = Matrix::zeros(n, n);
    for (&(x, y), plan) in pairs.iter().zip(&plans) {
        let value = plan.value.max(0.0);
        let d = if p == 1.0 { value } else { value.powf(1.0 / p) };
        out[(x, y)] = d;
        out[(y, x)] = d;
    }
    if let Some((x, z, y, excess)) = worst_triangle(&out) {
        if excess > tol.metric_tol * out.max_entry() {
            return Err(Error::TriangleViolation { x, z, y, excess });
        }
    }
    Ok(WpResult {
        metric: PseudoMetric::from_trusted(out),
        plans: keep_plans.then_some(PairPlans { n, plans }),
    })
}

/// `W_p(rho)` without plans, using default tolerances.
pub fn wp(chain: &MarkovChain, rho: &PseudoMetric, p: f64) -> Result<PseudoMetric> {
    Ok(apply_w(chain, rho, p, false, &Tolerances::default())?.metric)
}

/// Excess of `|W^p(x1,y1) - W^p(x2,y2)|` over `alpha(x1,x2) + alpha(y1,y2)`
/// for one quadruple, given the image `w = W_p(rho)`.
pub fn pair_lipschitz_excess(
    w: &PseudoMetric,
    alpha: &PseudoMetric,
    p: f64,
    (x1, y1): (usize, usize),
    (x2, y2): (usize, usize),
) -> f64 {
    let diff = (w.get(x1, y1).powf(p) - w.get(x2, y2).powf(p)).abs();
    diff - alpha.get(x1, x2) - alpha.get(y1, y2)
}

/// Samples random quadruples and returns the largest excess of the pair
/// Lipschitz bound for `W_p(rho)^p` (zero when the bound always holds).
/// `rho` must be bounded by one.
pub fn pair_lipschitz_check(
    chain: &MarkovChain,
    rho: &PseudoMetric,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if rho.max_entry() > 1.0 + 1e-12 {
        return Err(Error::ParameterRange(
            "pair Lipschitz bound needs rho <= 1; rescale first".into(),
        ));
    }
    let w = wp(chain, rho, p)?;
    let alpha = alpha_metric(chain);
    let n = chain.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let q1 = (rng.gen_range(0..n), rng.gen_range(0..n));
        let q2 = (rng.gen_range(0..n), rng.gen_range(0..n));
        worst = worst.max(pair_lipschitz_excess(&w, &alpha, p, q1, q2));
    }
    Ok(worst)
}
