//! Chain families with known eigendistances: lazy walks on the discrete
//! torus, independent spin flips, gambler's ruin with absorbing ends, and
//! random lazy chains for property testing.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{MarkovChain, PseudoMetric};
use crate::matrix::Matrix;

/// Named generator with its parameters, as used by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ExampleSpec {
    LazyTorus {
        l: usize,
        q: f64,
    },
    SpinFlip {
        n: usize,
        q: f64,
    },
    AbsorbingRuin {
        n: usize,
        q: f64,
    },
    Product {
        left: Box<ExampleSpec>,
        right: Box<ExampleSpec>,
    },
    RandomLazy {
        n: usize,
        seed: u64,
        min_selfloop: f64,
    },
}

impl ExampleSpec {
    pub fn build(&self) -> Result<MarkovChain> {
        match self {
            Self::LazyTorus { l, q } => lazy_torus(*l, *q),
            Self::SpinFlip { n, q } => spin_flip(*n, *q),
            Self::AbsorbingRuin { n, q } => gamblers_ruin(*n, *q),
            Self::Product { left, right } => {
                crate::structure::product_chain(&left.build()?, &right.build()?)
            }
            Self::RandomLazy {
                n,
                seed,
                min_selfloop,
            } => random_lazy_chain(*n, *seed, *min_selfloop),
        }
    }
}

fn check_q(q: f64, upper_inclusive: bool) -> Result<()> {
    let ok = q > 0.0 && if upper_inclusive { q <= 0.5 } else { q < 0.5 };
    if ok {
        Ok(())
    } else {
        Err(Error::ParameterRange(format!("q = {q} outside its range")))
    }
}

/// Lazy walk on `Z/LZ`: hold with `1 - 2q`, step to each neighbour with `q`.
pub fn lazy_torus(l: usize, q: f64) -> Result<MarkovChain> {
    if l < 3 {
        return Err(Error::ParameterRange(format!(
            "torus needs L >= 3, got {l}"
        )));
    }
    check_q(q, false)?;
    let p = Matrix::from_fn(l, l, |x, y| {
        if x == y {
            1.0 - 2.0 * q
        } else if y == (x + 1) % l || x == (y + 1) % l {
            q
        } else {
            0.0
        }
    });
    MarkovChain::new(p, Vec::new())
}

/// `rho_L(x,y) = sin(((x - y) mod L) pi / L)`.
pub fn rho_l(l: usize) -> Result<PseudoMetric> {
    if l < 4 {
        return Err(Error::ParameterRange(format!(
            "rho_L needs L >= 4, got {l}"
        )));
    }
    let d = Matrix::from_fn(l, l, |x, y| {
        if x == y {
            0.0
        } else {
            (((x + l - y) % l) as f64 * PI / l as f64).sin()
        }
    });
    Ok(PseudoMetric::from_trusted(symmetrize(d)))
}

/// Curvature of `rho_L` for holding probability `r`: `(1 - r)(1 - cos(2 pi / L))`.
/// Only an eigendistance claim when `r > q`; a warning is logged otherwise.
pub fn kappa_l(l: usize, r: f64) -> Result<f64> {
    if l < 4 {
        return Err(Error::ParameterRange(format!(
            "kappa_L needs L >= 4, got {l}"
        )));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(Error::ParameterRange(format!("r = {r} outside [0, 1)")));
    }
    let q = (1.0 - r) / 2.0;
    if r <= q {
        log::warn!("r = {r} <= q = {q}: rho_L is not guaranteed to be an eigendistance");
    }
    Ok((1.0 - r) * (1.0 - (2.0 * PI / l as f64).cos()))
}

/// `1{x - y odd}` on an even torus.
pub fn parity_metric(l: usize) -> Result<PseudoMetric> {
    if l % 2 == 1 || l < 2 {
        return Err(Error::OddTorus(l));
    }
    let d = Matrix::from_fn(l, l, |x, y| ((x + l - y) % 2) as f64);
    Ok(PseudoMetric::from_trusted(d))
}

/// Curvature `1 - |2q - r|` of the parity metric.
pub fn kappa_parity(q: f64, r: f64) -> f64 {
    1.0 - (2.0 * q - r).abs()
}

/// `n` independent spins, each flipping with probability `q` per step.
///
/// State `s` has spin `i` equal to bit `n - 1 - i` of `s`, so the chain on
/// `n` spins is the product (in [`crate::structure::product_chain`] order)
/// of the single-spin chains.
pub fn spin_flip(n: usize, q: f64) -> Result<MarkovChain> {
    if n == 0 {
        return Err(Error::ParameterRange("need at least one spin".into()));
    }
    if n > 12 {
        return Err(Error::SizeCap(n));
    }
    check_q(q, false)?;
    let size = 1usize << n;
    let p = Matrix::from_fn(size, size, |x, y| {
        let flips = (x ^ y).count_ones() as i32;
        q.powi(flips) * (1.0 - q).powi(n as i32 - flips)
    });
    let labels = (0..size).map(|s| format!("{s:0n$b}")).collect();
    MarkovChain::new(p, labels)
}

/// `rho_a(x,y) = sum_i a(i) 1{x(i) != y(i)}`, with spin order as in
/// [`spin_flip`].
pub fn weighted_hamming(a: &[f64]) -> Result<PseudoMetric> {
    let n = a.len();
    if n == 0 || n > 12 {
        return Err(Error::SizeCap(n));
    }
    if a.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::ParameterRange(
            "weights must be finite and >= 0".into(),
        ));
    }
    let size = 1usize << n;
    let d = Matrix::from_fn(size, size, |x, y| {
        let diff = x ^ y;
        (0..n)
            .filter(|&i| diff >> (n - 1 - i) & 1 == 1)
            .map(|i| a[i])
            .sum()
    });
    Ok(PseudoMetric::from_trusted(d))
}

/// Hamming distance on `n` spins.
pub fn hamming(n: usize) -> Result<PseudoMetric> {
    weighted_hamming(&vec![1.0; n])
}

/// Walk on `{0, ..., N}` absorbed at both ends; interior states step left or
/// right with probability `q` each and hold otherwise.
pub fn gamblers_ruin(n: usize, q: f64) -> Result<MarkovChain> {
    if n < 2 {
        return Err(Error::ParameterRange(format!(
            "ruin chain needs N >= 2, got {n}"
        )));
    }
    check_q(q, true)?;
    let p = Matrix::from_fn(n + 1, n + 1, |x, y| {
        if x == 0 || x == n {
            (x == y) as u8 as f64
        } else if x == y {
            1.0 - 2.0 * q
        } else if x.abs_diff(y) == 1 {
            q
        } else {
            0.0
        }
    });
    MarkovChain::new(p, Vec::new())
}

/// `h(x) = P_x(tau_1 < tau_2)` for disjoint absorbing sets `a1`, `a2`.
///
/// Solves `h = P h` on the states outside `a1 ∪ a2` with boundary values 1 on
/// `a1` and 0 on `a2`.
pub fn harmonic_h(chain: &MarkovChain, a1: &[usize], a2: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n();
    let mut boundary = vec![None; n];
    for (set, value) in [(a1, 1.0), (a2, 0.0)] {
        for &s in set {
            if s >= n {
                return Err(Error::ParameterRange(format!("state {s} out of range")));
            }
            if boundary[s].is_some() {
                return Err(Error::ParameterRange(format!("state {s} in both sets")));
            }
            if chain.prob(s, s) != 1.0 {
                return Err(Error::ParameterRange(format!("state {s} is not absorbing")));
            }
            boundary[s] = Some(value);
        }
    }
    if a1.is_empty() || a2.is_empty() {
        return Err(Error::ParameterRange(
            "both absorbing sets must be non-empty".into(),
        ));
    }
    // Every state must reach the absorbing set.
    let mut reaches: Vec<bool> = boundary.iter().map(Option::is_some).collect();
    loop {
        let mut changed = false;
        for x in 0..n {
            if !reaches[x] && (0..n).any(|y| chain.prob(x, y) > 0.0 && reaches[y]) {
                reaches[x] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(x) = reaches.iter().position(|&r| !r) {
        return Err(Error::UnreachableAbsorber(x));
    }

    let interior: Vec<usize> = (0..n).filter(|&x| boundary[x].is_none()).collect();
    let mut h: Vec<f64> = boundary.iter().map(|b| b.unwrap_or(0.0)).collect();
    if interior.is_empty() {
        return Ok(h);
    }
    let m = interior.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (r, &x) in interior.iter().enumerate() {
        a[(r, r)] += 1.0;
        for (c, &y) in interior.iter().enumerate() {
            a[(r, c)] -= chain.prob(x, y);
        }
        rhs[r] = (0..n)
            .filter_map(|y| boundary[y].map(|b| chain.prob(x, y) * b))
            .sum();
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::ParameterRange("singular harmonic system".into()))?;
    for (r, &x) in interior.iter().enumerate() {
        h[x] = sol[r];
    }
    Ok(h)
}

/// Random chain with `P(x,x) >= min_selfloop`; the remaining mass of each row
/// is split by normalized exponential weights. Deterministic in `seed`.
pub fn random_lazy_chain(n: usize, seed: u64, min_selfloop: f64) -> Result<MarkovChain> {
    if n == 0 {
        return Err(Error::Empty);
    }
    if !(min_selfloop > 0.5 && min_selfloop < 1.0) {
        return Err(Error::ParameterRange(format!(
            "min_selfloop = {min_selfloop} outside (1/2, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Matrix::zeros(n, n);
    for x in 0..n {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        let rest = 1.0 - min_selfloop;
        for y in 0..n {
            p[(x, y)] = rest * w[y] / total;
        }
        p[(x, x)] += min_selfloop;
        // Put the rounding error on the diagonal.
        let s: f64 = p.row(x).iter().sum();
        p[(x, x)] += 1.0 - s;
    }
    MarkovChain::new(p, Vec::new())
}

fn symmetrize(d: Matrix) -> Matrix {
    let n = d.rows();
    Matrix::from_fn(n, n, |i, j| if i < j { d[(i, j)] } else { d[(j, i)] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::check_laziness;

    #[test]
    fn torus_rows() {
        let c = lazy_torus(4, 0.25).unwrap();
        assert_eq!(c.row(0), &[0.5, 0.25, 0.0, 0.25]);
        assert_eq!(c.row(2), &[0.0, 0.25, 0.5, 0.25]);
        assert!(lazy_torus(5, 0.0).is_err());
        assert!(lazy_torus(5, 0.5).is_err());
        assert!(lazy_torus(2, 0.2).is_err());
        lazy_torus(3, 0.2).unwrap();
        assert!(rho_l(3).is_err());
    }

    #[test]
    fn rho_l_values() {
        let r = rho_l(4).unwrap();
        assert!((r.get(0, 1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((r.get(0, 2) - 1.0).abs() < 1e-15);
        assert_eq!(r.get(1, 0), r.get(0, 1));
        PseudoMetric::new(rho_l(13).unwrap().matrix().clone()).unwrap();
    }

    #[test]
    fn kappa_l_value() {
        let k = kappa_l(13, 0.5).unwrap();
        assert!((k - 0.057_271_987).abs() < 1e-7);
    }

    #[test]
    fn parity_values() {
        assert!((kappa_parity(0.2, 0.6) - 0.8).abs() < 1e-15);
        assert!((kappa_parity(1.0 / 3.0, 1.0 / 3.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((kappa_parity(0.25, 0.5) - 1.0).abs() < 1e-15);
        assert!(matches!(parity_metric(7), Err(Error::OddTorus(7))));
        let m = parity_metric(6).unwrap();
        assert_eq!(m.get(0, 3), 1.0);
        assert_eq!(m.get(0, 4), 0.0);
        assert_eq!(m.get(5, 0), 1.0);
    }

    #[test]
    fn single_spin() {
        let c = spin_flip(1, 0.1).unwrap();
        assert_eq!(c.row(0), &[0.9, 0.1]);
        assert_eq!(c.row(1), &[0.1, 0.9]);
        assert!(matches!(spin_flip(13, 0.1), Err(Error::SizeCap(13))));
    }

    #[test]
    fn hamming_weights() {
        let h = hamming(3).unwrap();
        assert_eq!(h.get(0b000, 0b111), 3.0);
        let w = weighted_hamming(&[1.0, 2.0, 3.0]).unwrap();
        // spin 0 is the most significant bit
        assert_eq!(w.get(0b000, 0b100), 1.0);
        assert_eq!(w.get(0b000, 0b001), 3.0);
        let z = weighted_hamming(&[1.0, 0.0]).unwrap();
        assert_eq!(z.get(0b00, 0b01), 0.0);
    }

    #[test]
    fn ruin_harmonic_function() {
        let c = gamblers_ruin(5, 0.5).unwrap();
        let h = harmonic_h(&c, &[0], &[5]).unwrap();
        for (x, hx) in h.iter().enumerate() {
            assert!((hx - (1.0 - x as f64 / 5.0)).abs() < 1e-14);
        }
        let lazy = gamblers_ruin(5, 0.25).unwrap();
        let hl = harmonic_h(&lazy, &[0], &[5]).unwrap();
        for (a, b) in h.iter().zip(&hl) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(hl[0], 1.0);
        assert_eq!(hl[5], 0.0);
    }

    #[test]
    fn harmonic_requires_reachable_absorbers() {
        // State 2 is closed and never absorbed.
        let p = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.25, 0.5, 0.0, 0.25],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let c = MarkovChain::new(p, vec![]).unwrap();
        assert!(matches!(
            harmonic_h(&c, &[0], &[3]),
            Err(Error::UnreachableAbsorber(2))
        ));
        assert!(harmonic_h(&c, &[0], &[1]).is_err());
    }

    #[test]
    fn random_lazy_is_deterministic_and_lazy() {
        let a = random_lazy_chain(5, 42, 0.6).unwrap();
        let b = random_lazy_chain(5, 42, 0.6).unwrap();
        assert_eq!(a, b);
        let lazy = check_laziness(&a);
        assert!(lazy.holds && lazy.min_selfloop >= 0.6 - 1e-15);
        assert!(random_lazy_chain(5, 1, 0.5).is_err());
    }

    #[test]
    fn spec_builds_each_family() {
        let specs = [
            ExampleSpec::LazyTorus { l: 5, q: 0.2 },
            ExampleSpec::SpinFlip { n: 2, q: 0.1 },
            ExampleSpec::AbsorbingRuin { n: 4, q: 0.25 },
            ExampleSpec::Product {
                left: Box::new(ExampleSpec::LazyTorus { l: 3, q: 0.2 }),
                right: Box::new(ExampleSpec::SpinFlip { n: 1, q: 0.3 }),
            },
            ExampleSpec::RandomLazy {
                n: 4,
                seed: 3,
                min_selfloop: 0.7,
            },
        ];
        let sizes: Vec<usize> = specs.iter().map(|s| s.build().unwrap().n()).collect();
        assert_eq!(sizes, [5, 4, 5, 6, 4]);
    }
}
