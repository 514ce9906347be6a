use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::DenseMatrix;

use super::kernels::{cosine_similarity, dot_f64};

/// Decisions whose f32 similarity lies within this distance of the
/// threshold are recomputed exactly in f64.
const FAST_MARGIN: f32 = 1e-3;
const FAST_SQ_MIN: f64 = 1e-30;
const FAST_SQ_MAX: f64 = 1e30;

/// f32 dot product with eight independent accumulators.
#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// [`dot_f32`] for a width known at compile time.
#[inline]
fn dot_fixed<const D: usize>(a: &[f32], b: &[f32]) -> f32 {
    let (a, b): (&[f32; D], &[f32; D]) = (a.try_into().expect("row width"), b.try_into().expect("row width"));
    let mut acc = [0.0f32; 8];
    for i in 0..D {
        acc[i % 8] += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// The multiset of source rows each target node aggregates over, in CSR
/// form. Built per layer, so pruning never touches the stored graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    /// Neighbor lists of `graph`; `include_self` prepends each node to its
    /// own list (the logical self-loop).
    pub fn from_graph(graph: &Graph, include_self: bool) -> Self {
        let n = graph.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(graph.num_edge_slots() + if include_self { n } else { 0 });
        offsets.push(0);
        for v in 0..n {
            if include_self {
                indices.push(v);
            }
            indices.extend_from_slice(graph.neighbors(v));
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn from_lists(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            if let Some(&u) = l.iter().find(|&&u| u >= n) {
                return Err(Error::Index { index: u, len: n });
            }
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices })
    }

    #[inline]
    pub fn num_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn of(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Total number of (target, source) slots.
    #[inline]
    pub fn num_slots(&self) -> usize {
        self.indices.len()
    }

    /// Drops every source `u != v` of target `v` whose cosine similarity
    /// with `v` is below `alpha`, computed on `embeddings`. Zero-norm rows
    /// have similarity 0 with every partner. Returns the kept neighborhoods
    /// and the number of dropped slots.
    pub fn prune_by_cosine(&self, embeddings: &DenseMatrix, alpha: f32) -> Result<(Self, usize)> {
        if embeddings.rows() != self.num_targets() {
            return Err(Error::Shape(format!(
                "{} embedding rows for {} targets",
                embeddings.rows(),
                self.num_targets()
            )));
        }
        let n = self.num_targets();
        let d = embeddings.cols();
        let sq_norms: Vec<f64> = embeddings.row_iter().map(|r| dot_f64(r, r)).collect();
        // An f32 dot of unit rows is accurate to about d·eps when no term
        // can overflow or underflow. Rows outside that range become NaN and
        // take the exact path, as does everything when d·eps nears the margin.
        let fast = 4.0 * d as f32 * f32::EPSILON < FAST_MARGIN;
        let mut unit = vec![f32::NAN; n * d];
        for (v, row) in embeddings.row_iter().enumerate() {
            let sq = sq_norms[v];
            if fast && (FAST_SQ_MIN..=FAST_SQ_MAX).contains(&sq) {
                let inv = (1.0 / sq.sqrt()) as f32;
                for (o, &x) in unit[v * d..(v + 1) * d].iter_mut().zip(row) {
                    *o = x * inv;
                }
            }
        }
        let mut indices = vec![0usize; self.indices.len()];
        let scan = CosineScan {
            nb: self,
            embeddings,
            unit: &unit,
            sq_norms: &sq_norms,
            alpha,
        };
        let (offsets, len) = match d {
            8 => scan.run(dot_fixed::<8>, &mut indices),
            16 => scan.run(dot_fixed::<16>, &mut indices),
            32 => scan.run(dot_fixed::<32>, &mut indices),
            64 => scan.run(dot_fixed::<64>, &mut indices),
            _ => scan.run(dot_f32, &mut indices),
        };
        indices.truncate(len);
        let dropped = self.indices.len() - len;
        Ok((Self { offsets, indices }, dropped))
    }

    pub fn max_len(&self) -> usize {
        (0..self.num_targets())
            .map(|v| self.offsets[v + 1] - self.offsets[v])
            .max()
            .unwrap_or(0)
    }
}

/// One pass of cosine pruning over unit-normalized rows.
struct CosineScan<'a> {
    nb: &'a Neighborhoods,
    embeddings: &'a DenseMatrix,
    unit: &'a [f32],
    sq_norms: &'a [f64],
    alpha: f32,
}

impl CosineScan<'_> {
    /// Writes kept sources into `indices`; returns offsets and kept count.
    #[inline]
    fn run(&self, dot: impl Fn(&[f32], &[f32]) -> f32, indices: &mut [usize]) -> (Vec<usize>, usize) {
        let (nb, unit, alpha) = (self.nb, self.unit, self.alpha);
        let d = self.embeddings.cols();
        let mut offsets = Vec::with_capacity(nb.offsets.len());
        let mut len = 0;
        offsets.push(0);
        for v in 0..nb.num_targets() {
            let ev = &unit[v * d..(v + 1) * d];
            for &u in nb.of(v) {
                let sim = dot(ev, &unit[u * d..(u + 1) * d]);
                let mut keep = (u == v) | (sim >= alpha);
                if !((sim - alpha).abs() > FAST_MARGIN) {
                    let exact = cosine_similarity(self.embeddings.row(v), self.embeddings.row(u), self.sq_norms[v], self.sq_norms[u]);
                    keep = (u == v) | (exact >= alpha as f64);
                }
                // Branch-free: keep decisions are close to coin flips.
                indices[len] = u;
                len += keep as usize;
            }
            offsets.push(len);
        }
        (offsets, len)
    }
}
