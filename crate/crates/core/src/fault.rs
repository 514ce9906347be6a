//! Random bit-flip fault model.
//!
//! Each stored bit flips independently with probability `ber`. Instead of a
//! Bernoulli draw per bit we draw the flip count `K ~ Binomial(bits, ber)`
//! and then `K` distinct uniform positions, which has the same distribution
//! and costs O(K).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Weights,
    Embeddings,
    Adjacency,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Weights, Site::Embeddings, Site::Adjacency];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Weights => "weights",
            Site::Embeddings => "embeddings",
            Site::Adjacency => "adjacency",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weights" | "weight" => Ok(Site::Weights),
            "embeddings" | "embedding" => Ok(Site::Embeddings),
            "adjacency" | "adj" => Ok(Site::Adjacency),
            other => Err(Error::Config(format!("unknown error site {other:?}"))),
        }
    }
}

/// Fully determines one injection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultSpec {
    pub site: Site,
    pub ber: f64,
    pub seed: u64,
}

impl FaultSpec {
    pub fn new(site: Site, ber: f64, seed: u64) -> Result<Self> {
        check_ber(ber)?;
        Ok(Self { site, ber, seed })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

pub fn check_ber(ber: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ber) {
        Ok(())
    } else {
        Err(Error::Param(format!("bit error rate {ber} outside [0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub bits_total: u64,
    pub bits_flipped: u64,
    pub words_affected: u64,
}

impl InjectionReport {
    pub fn merge(&mut self, other: &InjectionReport) {
        self.bits_total += other.bits_total;
        self.bits_flipped += other.bits_flipped;
        self.words_affected += other.words_affected;
    }
}

/// The float whose bit pattern is `value ^ mask`.
#[inline]
pub fn flip_word(value: f32, mask: u32) -> f32 {
    f32::from_bits(value.to_bits() ^ mask)
}

/// Draws the set of flipped positions among `total` bits, sorted ascending.
pub fn sample_flip_positions<R: Rng + ?Sized>(total: u64, ber: f64, rng: &mut R) -> Vec<u64> {
    if total == 0 || ber <= 0.0 {
        return Vec::new();
    }
    let k = if ber >= 1.0 {
        total
    } else {
        Binomial::new(total, ber).expect("valid binomial").sample(rng)
    };
    if k == 0 {
        return Vec::new();
    }
    let total_us = usize::try_from(total).expect("bit count fits in usize");
    let mut pos: Vec<u64> = index::sample(rng, total_us, k as usize)
        .into_iter()
        .map(|p| p as u64)
        .collect();
    pos.sort_unstable();
    pos
}

/// Flips bits of `m` in place, treating it as `32 · len` independent bits.
pub fn inject_matrix_in_place<R: Rng + ?Sized>(m: &mut DenseMatrix, ber: f64, rng: &mut R) -> InjectionReport {
    let total = 32 * m.len() as u64;
    let positions = sample_flip_positions(total, ber, rng);
    let data = m.data_mut();
    let mut words = 0u64;
    let mut last_word = u64::MAX;
    for &p in &positions {
        let w = p / 32;
        if w != last_word {
            words += 1;
            last_word = w;
        }
        let v = &mut data[w as usize];
        *v = flip_word(*v, 1u32 << (p % 32));
    }
    InjectionReport {
        bits_total: total,
        bits_flipped: positions.len() as u64,
        words_affected: words,
    }
}

pub fn inject_matrix<R: Rng + ?Sized>(m: &DenseMatrix, ber: f64, rng: &mut R) -> (DenseMatrix, InjectionReport) {
    let mut out = m.clone();
    let report = inject_matrix_in_place(&mut out, ber, rng);
    (out, report)
}

/// Number of stored adjacency bits: the strict upper triangle for undirected
/// graphs, all off-diagonal entries for directed ones. The diagonal
/// (self-loop) is never stored and never corrupted.
pub fn adjacency_bits(num_nodes: usize, directed: bool) -> u64 {
    let n = num_nodes as u64;
    if n < 2 {
        return 0;
    }
    if directed {
        n * (n - 1)
    } else {
        n * (n - 1) / 2
    }
}

/// Maps a linear adjacency-bit index to its `(row, col)` entry.
pub fn adjacency_entry(index: u64, num_nodes: usize, directed: bool) -> (usize, usize) {
    let n = num_nodes as u64;
    if directed {
        let i = index / (n - 1);
        let mut j = index % (n - 1);
        if j >= i {
            j += 1; // skip the diagonal
        }
        (i as usize, j as usize)
    } else {
        // row i covers indices [start(i), start(i+1)), start(i) = i(2n-i-1)/2
        let start = |i: u64| i * (2 * n - i - 1) / 2;
        let (mut lo, mut hi) = (0u64, n - 1);
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if start(mid) <= index {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let i = lo;
        let j = i + 1 + (index - start(i));
        (i as usize, j as usize)
    }
}

/// Toggles adjacency entries: present edges are removed, absent ones added.
/// Undirected graphs mirror each toggle.
pub fn toggle_entries(g: &Graph, entries: &[(usize, usize)]) -> Result<Graph> {
    let mut lists = g.neighbor_lists();
    let mut toggle = |a: usize, b: usize| {
        let list = &mut lists[a];
        match list.binary_search(&b) {
            Ok(pos) => {
                list.remove(pos);
            }
            Err(pos) => list.insert(pos, b),
        }
    };
    for &(i, j) in entries {
        if i >= g.num_nodes() || j >= g.num_nodes() {
            return Err(Error::Index {
                index: i.max(j),
                len: g.num_nodes(),
            });
        }
        if i == j {
            return Err(Error::Contract(format!("cannot toggle self-loop ({i}, {i})")));
        }
        toggle(i, j);
        if !g.is_directed() {
            toggle(j, i);
        }
    }
    g.with_neighbors(lists)
}

/// Flips bits of the logical 0/1 adjacency matrix.
pub fn inject_adjacency<R: Rng + ?Sized>(g: &Graph, ber: f64, rng: &mut R) -> Result<(Graph, InjectionReport)> {
    let n = g.num_nodes();
    let total = adjacency_bits(n, g.is_directed());
    let positions = sample_flip_positions(total, ber, rng);
    let entries: Vec<(usize, usize)> = positions
        .iter()
        .map(|&p| adjacency_entry(p, n, g.is_directed()))
        .collect();
    let out = toggle_entries(g, &entries)?;
    let report = InjectionReport {
        bits_total: total,
        bits_flipped: positions.len() as u64,
        words_affected: positions.len() as u64,
    };
    Ok((out, report))
}

/// Intercepts embedding buffers during a forward pass.
///
/// Point 0 is the raw input feature matrix; point `l` (1-based) is the
/// output of layer `l`. Each point is offered exactly once per forward.
pub trait EmbeddingHook {
    fn intercept(&mut self, point: usize, embeddings: &mut DenseMatrix);

    /// Highest point this hook expects to see; the forward pass rejects
    /// hooks whose points the model does not have.
    fn max_point(&self) -> Option<usize> {
        None
    }
}

/// Applies [`inject_matrix`] to every intercepted buffer.
pub struct EmbeddingInjector {
    ber: f64,
    rng: ChaCha8Rng,
    pub reports: Vec<(usize, InjectionReport)>,
}

impl EmbeddingInjector {
    pub fn new(ber: f64, seed: u64) -> Result<Self> {
        check_ber(ber)?;
        Ok(Self {
            ber,
            rng: ChaCha8Rng::seed_from_u64(seed),
            reports: Vec::new(),
        })
    }

    pub fn from_spec(spec: &FaultSpec) -> Result<Self> {
        Self::new(spec.ber, spec.seed)
    }

    pub fn total(&self) -> InjectionReport {
        let mut r = InjectionReport::default();
        for (_, rep) in &self.reports {
            r.merge(rep);
        }
        r
    }
}

impl EmbeddingHook for EmbeddingInjector {
    fn intercept(&mut self, point: usize, embeddings: &mut DenseMatrix) {
        let rep = inject_matrix_in_place(embeddings, self.ber, &mut self.rng);
        self.reports.push((point, rep));
    }
}

/// Deterministic flip of chosen bits at chosen points, for controlled
/// propagation experiments.
#[derive(Clone, Debug, Default)]
pub struct ForcedFlips {
    /// `(point, row, col, mask)`
    pub flips: Vec<(usize, usize, usize, u32)>,
    pub calls: Vec<usize>,
}

impl ForcedFlips {
    pub fn single(point: usize, row: usize, col: usize, mask: u32) -> Self {
        Self {
            flips: vec![(point, row, col, mask)],
            calls: Vec::new(),
        }
    }
}

impl EmbeddingHook for ForcedFlips {
    fn intercept(&mut self, point: usize, embeddings: &mut DenseMatrix) {
        self.calls.push(point);
        for &(p, r, c, mask) in &self.flips {
            if p == point {
                let v = embeddings.get(r, c);
                embeddings.set(r, c, flip_word(v, mask));
            }
        }
    }

    fn max_point(&self) -> Option<usize> {
        self.flips.iter().map(|f| f.0).max()
    }
}
