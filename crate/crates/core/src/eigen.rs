//! Fixed points of `W_p` up to scale: eigendistances `W_p(rho) = (1 - kappa) rho`.
//!
//! [`iterate_f`] runs the normalized iteration `rho -> W_p(rho / lambda(rho))`
//! where `lambda` measures the scale of `rho` against a reference metric.
//! [`iterate_maximal`] runs plain `W_p` iteration from the discrete metric,
//! whose limit is the largest curvature-zero fixed point.
//! [`sandwich_from_eigenfunction`] starts from a bracket built from a
//! nonnegative eigenfunction of `P`.
//!
//! Convergence of the normalized iteration is not guaranteed in general;
//! results carry a `converged` flag and the full trace of sup-norm changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{warn_if_not_lazy, MarkovChain, PseudoMetric, Tolerances};
use crate::matrix::Matrix;
use crate::wasserstein::{apply_w, check_dims, check_exponent};

/// Ratios and zero sets ignore entries below this fraction of the maximum.
pub const ZERO_REL: f64 = 1e-12;

/// A limit whose largest entry falls below `DEGENERATE_FACTOR * fp_tol` is
/// reported as the zero metric.
pub const DEGENERATE_FACTOR: f64 = 1e3;

/// Output of the eigendistance iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct EigendistanceResult {
    /// The fixed point normalized to maximal entry one (zero if degenerate).
    pub rho: PseudoMetric,
    /// Largest entry of the un-normalized final iterate.
    pub scale: f64,
    pub kappa: f64,
    pub p: f64,
    /// `|W_p(rho) - (1 - kappa) rho|_inf` for the normalized `rho`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of each step.
    pub trace: Vec<f64>,
}

impl EigendistanceResult {
    pub fn is_degenerate(&self) -> bool {
        self.rho.max_entry() == 0.0
    }
}

/// `lambda(rho) = sup rho(x,y) / reference(x,y)` over off-diagonal pairs with
/// `reference > 0`.
pub fn lambda_scale(rho: &PseudoMetric, reference: &PseudoMetric) -> Result<f64> {
    if rho.n() != reference.n() {
        return Err(Error::DimensionMismatch {
            expected: reference.n(),
            actual: rho.n(),
        });
    }
    let n = rho.n();
    let ref_floor = ZERO_REL * reference.max_entry();
    let mut lambda: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            let r = reference.get(x, y);
            if r > ref_floor {
                lambda = lambda.max(rho.get(x, y) / r);
            } else if rho.get(x, y) > ZERO_REL * rho.max_entry() {
                return Err(Error::DegenerateInput(format!(
                    "rho({x},{y}) > 0 where the reference vanishes"
                )));
            }
        }
    }
    if lambda == 0.0 {
        return Err(Error::DegenerateInput(
            "rho vanishes wherever the reference is positive".into(),
        ));
    }
    Ok(lambda)
}

/// Curvature and residual of a candidate eigendistance.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub kappa_hat: f64,
    pub residual: f64,
    /// `W_p(rho)`.
    pub image: PseudoMetric,
}

/// Checks `W_p(rho) = (1 - kappa) rho`.
///
/// `kappa_hat = 1 - max W_p(rho)/rho` over pairs with `rho` above
/// `ZERO_REL * max`; the zero set of `rho` must map to zero.
pub fn verify_eigendistance(
    chain: &MarkovChain,
    rho: &PseudoMetric,
    p: f64,
    tol: &Tolerances,
) -> Result<Verification> {
    let max = rho.max_entry();
    if max == 0.0 {
        return Err(Error::DegenerateInput("rho is identically zero".into()));
    }
    let image = apply_w(chain, rho, p, false, tol)?.metric;
    let n = rho.n();
    let floor = ZERO_REL * max;
    let mut ratio: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            let (r, w) = (rho.get(x, y), image.get(x, y));
            if r > floor {
                ratio = ratio.max(w / r);
            } else if w > tol.ot_tol {
                return Err(Error::ZeroSetViolation { x, y, value: w });
            }
        }
    }
    let residual = image.matrix().sup_distance(rho.scaled(ratio).matrix());
    Ok(Verification {
        kappa_hat: 1.0 - ratio,
        residual,
        image,
    })
}

/// Packages a metric that is known (or claimed) to be an eigendistance as a
/// result, normalized to maximal entry one. `converged` reports whether the
/// residual is within `fp_tol`.
pub fn certify(
    chain: &MarkovChain,
    rho: &PseudoMetric,
    p: f64,
    tol: &Tolerances,
) -> Result<EigendistanceResult> {
    let scale = rho.max_entry();
    let normalized = rho.normalized();
    let v = verify_eigendistance(chain, &normalized, p, tol)?;
    Ok(EigendistanceResult {
        rho: normalized,
        scale,
        kappa: v.kappa_hat,
        p,
        residual: v.residual,
        iterations: 0,
        converged: v.residual <= tol.fp_tol,
        trace: Vec::new(),
    })
}

/// Curvature and residual of the normalized final iterate, relative to
/// `reference`.
#[allow(clippy::too_many_arguments)]
fn finish(
    chain: &MarkovChain,
    last: &PseudoMetric,
    reference: &PseudoMetric,
    p: f64,
    tol: &Tolerances,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<EigendistanceResult> {
    let scale = last.max_entry();
    if scale <= DEGENERATE_FACTOR * tol.fp_tol {
        return Ok(EigendistanceResult {
            rho: PseudoMetric::zero(chain.n()),
            scale,
            kappa: 0.0,
            p,
            residual: 0.0,
            iterations,
            converged,
            trace,
        });
    }
    let rho = last.normalized();
    let image = apply_w(chain, &rho, p, false, tol)?.metric;
    let ratio = lambda_scale(&image, reference)? / lambda_scale(&rho, reference)?;
    let residual = image.matrix().sup_distance(rho.scaled(ratio).matrix());
    Ok(EigendistanceResult {
        rho,
        scale,
        kappa: 1.0 - ratio,
        p,
        residual,
        iterations,
        converged,
        trace,
    })
}

/// Normalized fixed-point iteration `rho_{k+1} = W_p(rho_k / lambda(rho_k))`.
///
/// `reference` defaults to the discrete metric. It must satisfy
/// `W_p(reference) <= reference`, and `init` must vanish wherever the
/// reference does. The scale of `init` is irrelevant.
pub fn iterate_f(
    chain: &MarkovChain,
    p: f64,
    init: &PseudoMetric,
    reference: Option<&PseudoMetric>,
    tol: &Tolerances,
) -> Result<EigendistanceResult> {
    tol.validate()?;
    check_exponent(p)?;
    check_dims(chain, init)?;
    warn_if_not_lazy(chain);
    let indicator;
    let reference = match reference {
        Some(r) => {
            check_dims(chain, r)?;
            let image = apply_w(chain, r, p, false, tol)?.metric;
            check_contracted(&image, r, tol.ot_tol)?;
            r
        }
        None => {
            indicator = PseudoMetric::indicator(chain.n());
            &indicator
        }
    };
    lambda_scale(init, reference)?;
    run_normalized(chain, p, init.clone(), reference, 1.0, None, tol)
}

fn check_contracted(image: &PseudoMetric, reference: &PseudoMetric, tol: f64) -> Result<()> {
    let n = image.n();
    for x in 0..n {
        for y in x + 1..n {
            let excess = image.get(x, y) - reference.get(x, y);
            if excess > tol {
                return Err(Error::ReferenceNotContracted { x, y, excess });
            }
        }
    }
    Ok(())
}

/// Lower and upper brackets checked after every step of the sandwich run.
struct Bracket<'a> {
    lower: &'a PseudoMetric,
    upper: &'a PseudoMetric,
}

/// Shared loop of [`iterate_f`] and [`sandwich_from_eigenfunction`]:
/// `rho_{k+1} = gain * W_p(rho_k / lambda(rho_k))`.
fn run_normalized(
    chain: &MarkovChain,
    p: f64,
    init: PseudoMetric,
    reference: &PseudoMetric,
    gain: f64,
    bracket: Option<Bracket<'_>>,
    tol: &Tolerances,
) -> Result<EigendistanceResult> {
    let mut rho = init;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..tol.max_iter {
        let lambda = lambda_scale(&rho, reference).map_err(|e| match e {
            Error::DegenerateInput(_) => Error::DegenerateLimit {
                iteration,
                lambda: 0.0,
            },
            other => other,
        })?;
        if lambda < 1e-12 {
            return Err(Error::DegenerateLimit { iteration, lambda });
        }
        let mut next = apply_w(chain, &rho.scaled(1.0 / lambda), p, false, tol)?.metric;
        if gain != 1.0 {
            next = next.scaled(gain);
        }
        if let Some(b) = &bracket {
            check_bracket(&next, b, iteration + 1, tol.fp_tol)?;
        }
        let change = next.matrix().sup_distance(rho.matrix());
        trace.push(change);
        rho = next;
        if change <= tol.fp_tol {
            converged = true;
            break;
        }
    }
    let iterations = trace.len();
    finish(chain, &rho, reference, p, tol, iterations, converged, trace)
}

fn check_bracket(rho: &PseudoMetric, b: &Bracket<'_>, iteration: usize, tol: f64) -> Result<()> {
    let n = rho.n();
    for x in 0..n {
        for y in x + 1..n {
            let v = rho.get(x, y);
            let below = b.lower.get(x, y) - v;
            let above = v - b.upper.get(x, y);
            let excess = below.max(above);
            if excess > tol {
                return Err(Error::SandwichViolation {
                    iteration,
                    x,
                    y,
                    excess,
                });
            }
        }
    }
    Ok(())
}

/// Plain iteration `rho_{k+1} = W_p(rho_k)` from the discrete metric.
///
/// The sequence is non-increasing; an increase beyond `ot_tol` is reported as
/// [`Error::MonotonicityViolation`]. The limit is a curvature-zero fixed point
/// and may be identically zero, which is reported through
/// [`EigendistanceResult::is_degenerate`].
pub fn iterate_maximal(
    chain: &MarkovChain,
    p: f64,
    tol: &Tolerances,
) -> Result<EigendistanceResult> {
    tol.validate()?;
    check_exponent(p)?;
    let n = chain.n();
    let indicator = PseudoMetric::indicator(n);
    let mut rho = indicator.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..tol.max_iter {
        let next = apply_w(chain, &rho, p, false, tol)?.metric;
        if let Some((x, y, increase)) = largest_increase(&rho, &next) {
            if increase > tol.ot_tol {
                return Err(Error::MonotonicityViolation {
                    iteration: iteration + 1,
                    x,
                    y,
                    increase,
                });
            }
        }
        let change = next.matrix().sup_distance(rho.matrix());
        trace.push(change);
        rho = next;
        if change <= tol.fp_tol || rho.max_entry() < f64::MIN_POSITIVE {
            converged = true;
            break;
        }
    }
    let iterations = trace.len();
    if n == 1 {
        return Ok(EigendistanceResult {
            rho,
            scale: 0.0,
            kappa: 0.0,
            p,
            residual: 0.0,
            iterations,
            converged,
            trace,
        });
    }
    finish(
        chain, &rho, &indicator, p, tol, iterations, converged, trace,
    )
}

fn largest_increase(prev: &PseudoMetric, next: &PseudoMetric) -> Option<(usize, usize, f64)> {
    let n = prev.n();
    let mut worst: Option<(usize, usize, f64)> = None;
    for x in 0..n {
        for y in x + 1..n {
            let inc = next.get(x, y) - prev.get(x, y);
            if worst.is_none_or(|w| inc > w.2) {
                worst = Some((x, y, inc));
            }
        }
    }
    worst
}

/// Result of [`sandwich_from_eigenfunction`].
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub result: EigendistanceResult,
    /// The un-normalized fixed point, which lies between the brackets.
    pub fixed_point: PseudoMetric,
    /// `|h(x) - h(y)|^(1/p)`.
    pub lower: PseudoMetric,
    /// `1{x != y} (h(x) + h(y))^(1/p)`.
    pub upper: PseudoMetric,
    /// `1 - lambda^(1/p)`.
    pub expected_kappa: f64,
}

/// Eigendistance bracketed by a nonnegative eigenfunction `P h = lambda h`.
///
/// Runs `rho -> lambda^(-1/p) W_p(rho / lambda_ref(rho))` from the upper
/// bracket with the upper bracket as reference. The factor `lambda^(-1/p)`
/// only fixes the scale (the normalized iterates are those of [`iterate_f`]),
/// and keeps every iterate inside the bracket; leaving it is reported as
/// [`Error::SandwichViolation`].
pub fn sandwich_from_eigenfunction(
    chain: &MarkovChain,
    h: &[f64],
    lambda_eig: f64,
    p: f64,
    tol: &Tolerances,
) -> Result<SandwichResult> {
    tol.validate()?;
    check_exponent(p)?;
    let n = chain.n();
    if h.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h.len(),
        });
    }
    if h.iter().any(|&v| !v.is_finite() || v < 0.0) || h.iter().all(|&v| v == 0.0) {
        return Err(Error::NegativeEigenfunction);
    }
    if !(lambda_eig > 0.0 && lambda_eig.is_finite()) {
        return Err(Error::ParameterRange(format!(
            "eigenvalue {lambda_eig} must be positive"
        )));
    }
    let ph = chain.apply(h);
    let residual = ph
        .iter()
        .zip(h)
        .map(|(a, b)| (a - lambda_eig * b).abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(Error::NotAnEigenfunction { residual });
    }
    let inv_p = 1.0 / p;
    let lower = PseudoMetric::from_trusted(Matrix::from_fn(n, n, |x, y| {
        (h[x] - h[y]).abs().powf(inv_p)
    }));
    let upper = PseudoMetric::from_trusted(Matrix::from_fn(n, n, |x, y| {
        if x == y {
            0.0
        } else {
            (h[x] + h[y]).powf(inv_p)
        }
    }));
    if upper.max_entry() == 0.0 {
        return Err(Error::DegenerateInput("upper bracket vanishes".into()));
    }
    let gain = lambda_eig.powf(-inv_p);
    let bracket = Bracket {
        lower: &lower,
        upper: &upper,
    };
    // `finish` normalizes; recover the un-normalized fixed point from its scale.
    let result = run_normalized(chain, p, upper.clone(), &upper, gain, Some(bracket), tol)?;
    let fixed_point = result.rho.scaled(result.scale);
    Ok(SandwichResult {
        result,
        fixed_point,
        lower,
        upper,
        expected_kappa: 1.0 - lambda_eig.powf(inv_p),
    })
}

/// Turns a converged `p = 1` eigendistance `rho` with curvature `kappa` into
/// the `p`-eigendistance `rho^(1/p)` with curvature `1 - (1 - kappa)^(1/p)`.
///
/// Since `W_p(rho^(1/p))^p = W_1(rho)`, a `p = 1` residual `e` becomes at most
/// `e^(1/p)`; exceeding `e^(1/p) + fp_tol` is an error.
pub fn p_root_transfer(
    chain: &MarkovChain,
    result: &EigendistanceResult,
    p: f64,
    tol: &Tolerances,
) -> Result<EigendistanceResult> {
    check_exponent(p)?;
    if !result.converged || result.p != 1.0 || result.is_degenerate() {
        return Err(Error::NotConverged);
    }
    let inv_p = 1.0 / p;
    let rho = result.rho.powf(inv_p);
    let kappa = 1.0 - (1.0 - result.kappa).powf(inv_p);
    let image = apply_w(chain, &rho, p, false, tol)?.metric;
    let residual = image
        .matrix()
        .sup_distance(rho.scaled(1.0 - kappa).matrix());
    let bound = result.residual.powf(inv_p) + tol.fp_tol;
    if residual > bound {
        return Err(Error::TransferResidual { residual, bound });
    }
    Ok(EigendistanceResult {
        scale: rho.max_entry(),
        rho,
        kappa,
        p,
        residual,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    })
}

/// Serializable summary of an [`EigendistanceResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigendistanceSummary {
    pub rho: Vec<Vec<f64>>,
    pub scale: f64,
    pub kappa: f64,
    pub p: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl From<&EigendistanceResult> for EigendistanceSummary {
    fn from(r: &EigendistanceResult) -> Self {
        Self {
            rho: r.rho.matrix().to_rows(),
            scale: r.scale,
            kappa: r.kappa,
            p: r.p,
            residual: r.residual,
            iterations: r.iterations,
            converged: r.converged,
            trace: r.trace.clone(),
        }
    }
}
