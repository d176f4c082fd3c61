//! Lumpable partitions, quotient chains, and product constructions.
//!
//! On a finite state space every map is continuous, so a state map whose
//! pushed-forward rows depend only on the image is exactly a strongly
//! lumpable partition.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{MarkovChain, PseudoMetric};
use crate::matrix::Matrix;
use crate::wasserstein::check_exponent;

/// Row masses into a block must agree within this for states in one block.
pub const LUMP_TOL: f64 = 1e-12;

/// Pairs at distance at most `ZERO_SET_REL * max` are identified.
pub const ZERO_SET_REL: f64 = 1e-10;

/// Largest state count for the exhaustive partition search.
pub const EXHAUSTIVE_MAX: usize = 12;

/// Disjoint nonempty blocks covering `0..n`.
///
/// Blocks are kept sorted internally and ordered by their smallest state, so
/// equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    blocks: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        let n = r.blocks.iter().map(Vec::len).sum();
        Partition::new(r.blocks, n)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr { blocks: p.blocks }
    }
}

impl Partition {
    pub fn new(mut blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            block.sort_unstable();
            for &s in block.iter() {
                if s >= n {
                    return Err(Error::InvalidPartition(format!(
                        "state {s} out of range 0..{n}"
                    )));
                }
                if std::mem::replace(&mut seen[s], true) {
                    return Err(Error::InvalidPartition(format!("state {s} appears twice")));
                }
            }
        }
        if let Some(s) = seen.iter().position(|&v| !v) {
            return Err(Error::InvalidPartition(format!("state {s} is not covered")));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { blocks, n })
    }

    /// Partition whose blocks are the level sets of `labels`
    /// (a restricted-growth or any other labelling).
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (s, &l) in labels.iter().enumerate() {
            map.entry(l).or_default().push(s);
        }
        let mut blocks: Vec<Vec<usize>> = map.into_values().collect();
        blocks.sort_unstable_by_key(|b| b[0]);
        Self {
            blocks,
            n: labels.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            blocks: (0..n).map(|s| vec![s]).collect(),
            n,
        }
    }

    pub fn one_block(n: usize) -> Self {
        Self {
            blocks: vec![(0..n).collect()],
            n,
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Constant or bijective.
    pub fn is_trivial(&self) -> bool {
        self.blocks.len() <= 1 || self.blocks.len() == self.n
    }

    /// Block index of every state.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (b, block) in self.blocks.iter().enumerate() {
            for &s in block {
                out[s] = b;
            }
        }
        out
    }
}

/// `mass[x][b] = sum of P(x, z) over z in block b`.
fn block_masses(chain: &MarkovChain, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    (0..chain.n())
        .map(|x| {
            let mut m = vec![0.0; k];
            for (z, &pz) in chain.row(x).iter().enumerate() {
                m[labels[z]] += pz;
            }
            m
        })
        .collect()
}

/// First pair `(x, y)` in one block whose masses into some block differ by
/// more than [`LUMP_TOL`], with that block and the signed difference.
fn lump_violation(
    masses: &[Vec<f64>],
    partition_blocks: &[Vec<usize>],
) -> Option<(usize, usize, Vec<f64>)> {
    for block in partition_blocks {
        let x = block[0];
        for &y in &block[1..] {
            let diff: Vec<f64> = masses[x]
                .iter()
                .zip(&masses[y])
                .map(|(a, b)| a - b)
                .collect();
            if diff.iter().any(|d| d.abs() > LUMP_TOL) {
                return Some((x, y, diff));
            }
        }
    }
    None
}

fn labels_lumpable(chain: &MarkovChain, labels: &[usize], k: usize, scratch: &mut [f64]) -> bool {
    // Representative masses per block; `scratch` holds k*k entries.
    let mut have = vec![false; k];
    for x in 0..chain.n() {
        let b = labels[x];
        let mut row = [0.0f64; EXHAUSTIVE_MAX];
        let row = &mut row[..k];
        for (z, &pz) in chain.row(x).iter().enumerate() {
            row[labels[z]] += pz;
        }
        let rep = &mut scratch[b * k..(b + 1) * k];
        if have[b] {
            if rep
                .iter()
                .zip(row.iter())
                .any(|(a, c)| (a - c).abs() > LUMP_TOL)
            {
                return false;
            }
        } else {
            rep.copy_from_slice(row);
            have[b] = true;
        }
    }
    true
}

/// Whether every pair of states in one block sends equal mass into every
/// block, within [`LUMP_TOL`].
pub fn is_lumpable(chain: &MarkovChain, partition: &Partition) -> Result<bool> {
    if partition.n() != chain.n() {
        return Err(Error::DimensionMismatch {
            expected: chain.n(),
            actual: partition.n(),
        });
    }
    let masses = block_masses(chain, &partition.labels(), partition.len());
    Ok(lump_violation(&masses, partition.blocks()).is_none())
}

/// Restricted growth strings of length `n` with exactly `k` distinct values.
fn for_each_rgs_with_blocks(
    n: usize,
    k: usize,
    f: &mut impl FnMut(&[usize]) -> ControlFlow<()>,
) -> ControlFlow<()> {
    fn go(
        a: &mut Vec<usize>,
        used: usize,
        n: usize,
        k: usize,
        f: &mut impl FnMut(&[usize]) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let i = a.len();
        if i == n {
            return if used == k {
                f(a)
            } else {
                ControlFlow::Continue(())
            };
        }
        // Values still needed must fit in the remaining positions.
        let remaining = n - i;
        for v in 0..=used.min(k - 1) {
            let used_next = if v == used { used + 1 } else { used };
            if k - used_next > remaining - 1 {
                continue;
            }
            a.push(v);
            let flow = go(a, used_next, n, k, f);
            a.pop();
            flow?;
        }
        ControlFlow::Continue(())
    }
    if n == 0 || k == 0 || k > n {
        return ControlFlow::Continue(());
    }
    let mut a = Vec::with_capacity(n);
    go(&mut a, 0, n, k, f)
}

/// Visits every nontrivial lumpable partition, coarsest first (by block
/// count, then lexicographically by restricted growth string). The visitor
/// may stop early by returning `Break`.
pub fn for_each_lumpable_partition(
    chain: &MarkovChain,
    mut visit: impl FnMut(Partition) -> ControlFlow<()>,
) -> Result<()> {
    let n = chain.n();
    if n > EXHAUSTIVE_MAX {
        return Err(Error::BudgetExceeded { n });
    }
    let mut scratch = vec![0.0; n * n];
    for k in 2..n {
        let flow = for_each_rgs_with_blocks(n, k, &mut |labels| {
            if labels_lumpable(chain, labels, k, &mut scratch[..k * k]) {
                visit(Partition::from_labels(labels))
            } else {
                ControlFlow::Continue(())
            }
        });
        if flow.is_break() {
            break;
        }
    }
    Ok(())
}

/// All nontrivial lumpable partitions, coarsest first.
pub fn lumpable_partitions(chain: &MarkovChain) -> Result<Vec<Partition>> {
    let mut out = Vec::new();
    for_each_lumpable_partition(chain, |p| {
        out.push(p);
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Enumerates every partition; requires at most 12 states.
    Exhaustive,
    /// Pair-seeded merging; never certifies absence.
    Heuristic,
    /// Exhaustive up to 12 states, heuristic beyond.
    Auto,
}

/// Outcome of [`find_lumpable_partition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpSearch {
    pub partition: Option<Partition>,
    /// True when the search was exhaustive, so `None` certifies that the
    /// chain has no nontrivial lumpable partition.
    pub exhaustive: bool,
}

impl LumpSearch {
    pub fn certified_irreducible(&self) -> bool {
        self.exhaustive && self.partition.is_none()
    }
}

/// Looks for a nontrivial lumpable partition.
pub fn find_lumpable_partition(chain: &MarkovChain, mode: SearchMode) -> Result<LumpSearch> {
    let n = chain.n();
    let exhaustive = match mode {
        SearchMode::Exhaustive if n > EXHAUSTIVE_MAX => return Err(Error::BudgetExceeded { n }),
        SearchMode::Exhaustive => true,
        SearchMode::Heuristic => false,
        SearchMode::Auto => n <= EXHAUSTIVE_MAX,
    };
    let partition = if exhaustive {
        let mut found = None;
        for_each_lumpable_partition(chain, |p| {
            found = Some(p);
            ControlFlow::Break(())
        })?;
        found
    } else {
        heuristic_search(chain)
    };
    Ok(LumpSearch {
        partition,
        exhaustive,
    })
}

/// Merges `x` and `y`, then repairs violations by merging a block that one
/// state over-weights with a block it under-weights, until the partition is
/// lumpable. Returns the coarsest nontrivial result over all seed pairs.
fn heuristic_search(chain: &MarkovChain) -> Option<Partition> {
    let n = chain.n();
    let mut best: Option<Partition> = None;
    for x in 0..n {
        for y in x + 1..n {
            let mut labels: Vec<usize> = (0..n).collect();
            labels[y] = x;
            let p = loop {
                let part = Partition::from_labels(&labels);
                if part.len() <= 1 {
                    break None;
                }
                let masses = block_masses(chain, &part.labels(), part.len());
                let Some((_, _, diff)) = lump_violation(&masses, part.blocks()) else {
                    break Some(part);
                };
                let pos = argmax(&diff);
                let neg = argmax(&diff.iter().map(|d| -d).collect::<Vec<_>>());
                let (keep, drop) = (part.blocks()[pos][0], part.blocks()[neg][0]);
                let canon = part.labels();
                labels = canon
                    .iter()
                    .map(|&b| {
                        let rep = part.blocks()[b][0];
                        if rep == drop {
                            keep
                        } else {
                            rep
                        }
                    })
                    .collect();
            };
            if let Some(p) = p.filter(|p| !p.is_trivial()) {
                if best.as_ref().is_none_or(|b| p.len() < b.len()) {
                    best = Some(p);
                }
            }
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The chain on blocks, `Q(B, B') = sum of P(x, z) over z in B'` for any
/// `x` in `B`.
pub fn quotient_chain(chain: &MarkovChain, partition: &Partition) -> Result<MarkovChain> {
    if !is_lumpable(chain, partition)? {
        return Err(Error::NotLumpable);
    }
    let k = partition.len();
    let masses = block_masses(chain, &partition.labels(), k);
    let q = Matrix::from_fn(k, k, |b, c| masses[partition.blocks()[b][0]][c]);
    let labels = partition
        .blocks()
        .iter()
        .map(|block| {
            if block.len() == 1 {
                chain.labels()[block[0]].clone()
            } else {
                let names: Vec<&str> = block.iter().map(|&s| chain.labels()[s].as_str()).collect();
                format!("{{{}}}", names.join(","))
            }
        })
        .collect();
    MarkovChain::new(q, labels)
}

/// Classes of `x ~ y` iff `rho(x, y) <= ZERO_SET_REL * max(rho)`.
pub fn zero_set_partition(rho: &PseudoMetric) -> Partition {
    let n = rho.n();
    let max = rho.max_entry();
    if max == 0.0 {
        return Partition::one_block(n);
    }
    let thresh = ZERO_SET_REL * max;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for x in 0..n {
        for y in x + 1..n {
            if rho.get(x, y) <= thresh {
                let (a, b) = (find(&mut parent, x), find(&mut parent, y));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
    Partition::from_labels(&labels)
}

/// Two independent chains run side by side; state `(a, b)` has index
/// `a * n_b + b`.
pub fn product_chain(a: &MarkovChain, b: &MarkovChain) -> Result<MarkovChain> {
    let (na, nb) = (a.n(), b.n());
    let p = Matrix::from_fn(na * nb, na * nb, |s, t| {
        a.prob(s / nb, t / nb) * b.prob(s % nb, t % nb)
    });
    let labels = (0..na * nb)
        .map(|s| format!("({},{})", a.labels()[s / nb], b.labels()[s % nb]))
        .collect();
    MarkovChain::new(p, labels)
}

/// `((a rho_x^p + b rho_y^p))^(1/p)` on the product space indexed as in
/// [`product_chain`].
pub fn tensor_metric(
    rho_x: &PseudoMetric,
    rho_y: &PseudoMetric,
    a: f64,
    b: f64,
    p: f64,
) -> Result<PseudoMetric> {
    check_exponent(p)?;
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::ParameterRange(format!(
            "tensor weights must be non-negative, got a = {a}, b = {b}"
        )));
    }
    let (nx, ny) = (rho_x.n(), rho_y.n());
    let d = Matrix::from_fn(nx * ny, nx * ny, |s, t| {
        let dx = rho_x.get(s / ny, t / ny);
        let dy = rho_y.get(s % ny, t % ny);
        if p == 1.0 {
            a * dx + b * dy
        } else {
            (a * dx.powf(p) + b * dy.powf(p)).powf(1.0 / p)
        }
    });
    Ok(PseudoMetric::from_trusted(d))
}

/// Fibers of the first (`first = true`) or second coordinate of a product
/// of an `na`-state and an `nb`-state space.
pub fn coordinate_partition(na: usize, nb: usize, first: bool) -> Partition {
    let labels: Vec<usize> = (0..na * nb)
        .map(|s| if first { s / nb } else { s % nb })
        .collect();
    Partition::from_labels(&labels)
}
