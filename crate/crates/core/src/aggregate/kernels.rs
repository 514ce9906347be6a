//! Plain (tape-free) forward kernels and their backward rules.

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

use super::Neighborhoods;

/// Result of one aggregation over all targets.
#[derive(Clone, Debug)]
pub struct KernelOutput {
    pub values: DenseMatrix,
    /// Value slots excluded from the reduction.
    pub discarded: u64,
}

/// A fully resolved reduction, with any calibrated state it needs.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Mean,
    Sum,
    Max,
    Median,
    Trimmed { beta: f32 },
    SoftMedian { temperature: f32 },
    Clip { lo: Vec<f32>, hi: Vec<f32> },
    Distribution { mean: Vec<f32>, std: Vec<f32>, a: f32, b: f32 },
    /// Center row is passed separately so it can be differentiated.
    Dynamic,
}

fn check(values: &DenseMatrix, nb: &Neighborhoods, width: Option<usize>) -> Result<()> {
    if values.rows() != nb.num_targets() {
        return Err(Error::Shape(format!(
            "{} value rows for {} targets",
            values.rows(),
            nb.num_targets()
        )));
    }
    if let Some(w) = width {
        if w != values.cols() {
            return Err(Error::Shape(format!(
                "aggregator state has width {w}, embeddings have {}",
                values.cols()
            )));
        }
    }
    Ok(())
}

/// f64 dot product with four independent accumulators.
#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = (a.chunks_exact(4), a.chunks_exact(4).remainder());
    let rb = b.chunks_exact(4).remainder();
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| x as f64 * y as f64).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cosine similarity given precomputed squared norms; 0 when either norm
/// is zero. Identical nonzero rows give exactly 1.
#[inline]
pub fn cosine_similarity(a: &[f32], b: &[f32], sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        return 0.0;
    }
    dot_f64(a, b) / (sq_a * sq_b).sqrt()
}

/// Sorts `(value, source)` pairs of column `j` in IEEE total order, which
/// places positive NaN last and negative NaN first.
fn sorted_column(values: &DenseMatrix, nbr: &[usize], j: usize, buf: &mut Vec<(f32, usize)>) {
    buf.clear();
    buf.extend(nbr.iter().map(|&u| (values.get(u, j), u)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

/// Median positions in a sorted column of length `n`: one or two indices.
#[inline]
fn median_positions(n: usize) -> (usize, usize) {
    if n % 2 == 1 {
        (n / 2, n / 2)
    } else {
        (n / 2 - 1, n / 2)
    }
}

/// Per-node dynamic weights `1 / (‖h_u − center‖² + 1)`; zero for rows
/// holding a non-finite value.
pub fn node_weights(values: &DenseMatrix, center: &[f32]) -> Vec<f64> {
    values
        .row_iter()
        .map(|row| {
            let mut d2 = 0.0f64;
            for (&x, &m) in row.iter().zip(center) {
                if !x.is_finite() {
                    return 0.0;
                }
                let diff = x as f64 - m as f64;
                d2 += diff * diff;
            }
            1.0 / (d2 + 1.0)
        })
        .collect()
}

/// Per-dimension open interval bounds. A zero-width interval becomes the
/// one-ulp neighborhood of the mean, so exactly the values equal to the
/// mean fall strictly inside.
fn interval(mean: &[f32], std: &[f32], a: f32, b: f32) -> (Vec<f32>, Vec<f32>) {
    mean.iter()
        .zip(std)
        .map(|(&m, &s)| {
            if s == 0.0 {
                (m.next_down(), m.next_up())
            } else {
                (
                    (m as f64 - a as f64 * s as f64) as f32,
                    (m as f64 + b as f64 * s as f64) as f32,
                )
            }
        })
        .unzip()
}

#[inline]
fn inside(x: f32, lo: f32, hi: f32) -> bool {
    (x > lo) & (x < hi)
}

impl Kernel {
    pub fn forward(&self, values: &DenseMatrix, nb: &Neighborhoods, center: Option<&[f32]>) -> Result<KernelOutput> {
        let d = values.cols();
        let n = nb.num_targets();
        match self {
            Kernel::Mean | Kernel::Sum => {
                check(values, nb, None)?;
                let mut out = DenseMatrix::zeros(n, d);
                for v in 0..n {
                    let nbr = nb.of(v);
                    let orow = out.row_mut(v);
                    if nbr.is_empty() {
                        orow.copy_from_slice(values.row(v));
                        continue;
                    }
                    for &u in nbr {
                        for (o, &x) in orow.iter_mut().zip(values.row(u)) {
                            *o += x;
                        }
                    }
                    if *self == Kernel::Mean {
                        let inv = 1.0 / nbr.len() as f32;
                        orow.iter_mut().for_each(|o| *o *= inv);
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded: 0,
                })
            }
            Kernel::Max => {
                check(values, nb, None)?;
                let mut out = DenseMatrix::zeros(n, d);
                for v in 0..n {
                    let nbr = nb.of(v);
                    if nbr.is_empty() {
                        out.row_mut(v).copy_from_slice(values.row(v));
                        continue;
                    }
                    for j in 0..d {
                        out.set(v, j, values.get(max_source(values, nbr, j), j));
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded: 0,
                })
            }
            Kernel::Median => {
                check(values, nb, None)?;
                let mut out = DenseMatrix::zeros(n, d);
                let mut buf = Vec::new();
                let mut discarded = 0u64;
                for v in 0..n {
                    let nbr = nb.of(v);
                    if nbr.is_empty() {
                        out.row_mut(v).copy_from_slice(values.row(v));
                        continue;
                    }
                    let (lo, hi) = median_positions(nbr.len());
                    discarded += ((nbr.len() - (hi - lo + 1)) * d) as u64;
                    for j in 0..d {
                        sorted_column(values, nbr, j, &mut buf);
                        out.set(v, j, 0.5 * buf[lo].0 + 0.5 * buf[hi].0);
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded,
                })
            }
            Kernel::Trimmed { beta } => {
                check(values, nb, None)?;
                let mut out = DenseMatrix::zeros(n, d);
                let mut buf = Vec::new();
                let mut discarded = 0u64;
                for v in 0..n {
                    let nbr = nb.of(v);
                    if nbr.is_empty() {
                        out.row_mut(v).copy_from_slice(values.row(v));
                        continue;
                    }
                    let k = trim_count(*beta, nbr.len());
                    discarded += (2 * k * d) as u64;
                    let kept = (nbr.len() - 2 * k) as f64;
                    for j in 0..d {
                        sorted_column(values, nbr, j, &mut buf);
                        let s: f64 = buf[k..nbr.len() - k].iter().map(|p| p.0 as f64).sum();
                        out.set(v, j, (s / kept) as f32);
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded,
                })
            }
            Kernel::SoftMedian { temperature } => {
                check(values, nb, None)?;
                let mut out = DenseMatrix::zeros(n, d);
                let mut buf = Vec::new();
                for v in 0..n {
                    let nbr = nb.of(v);
                    let sm = soft_median_target(values, nbr, *temperature, &mut buf);
                    match sm {
                        Some(sm) => {
                            let orow = out.row_mut(v);
                            let mut acc = vec![0.0f64; d];
                            for (k, &u) in nbr.iter().enumerate() {
                                let w = sm.weights[k];
                                if w > 0.0 {
                                    for (a, &x) in acc.iter_mut().zip(values.row(u)) {
                                        *a += w * x as f64;
                                    }
                                }
                            }
                            for (o, a) in orow.iter_mut().zip(acc) {
                                *o = a as f32;
                            }
                        }
                        None => out.row_mut(v).copy_from_slice(values.row(v)),
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded: 0,
                })
            }
            Kernel::Clip { lo, hi } => {
                check(values, nb, Some(lo.len()))?;
                let mut out = DenseMatrix::zeros(n, d);
                for v in 0..n {
                    let nbr = nb.of(v);
                    let orow = out.row_mut(v);
                    if nbr.is_empty() {
                        orow.copy_from_slice(values.row(v));
                        continue;
                    }
                    for &u in nbr {
                        for (((o, &x), &l), &h) in orow.iter_mut().zip(values.row(u)).zip(lo).zip(hi) {
                            *o += x.clamp(l, h);
                        }
                    }
                    let inv = 1.0 / nbr.len() as f32;
                    orow.iter_mut().for_each(|o| *o *= inv);
                }
                Ok(KernelOutput {
                    values: out,
                    discarded: 0,
                })
            }
            Kernel::Distribution { mean, std, a, b } => {
                check(values, nb, Some(mean.len()))?;
                let (lo, hi) = interval(mean, std, *a, *b);
                let mut out = DenseMatrix::zeros(n, d);
                let mut counts = vec![0.0f32; d];
                let mut discarded = 0u64;
                let (lo, hi) = (&lo[..d], &hi[..d]);
                for v in 0..n {
                    let nbr = nb.of(v);
                    counts.iter_mut().for_each(|c| *c = 0.0);
                    let (orow, counts) = (&mut out.row_mut(v)[..d], &mut counts[..d]);
                    for &u in nbr {
                        let row = &values.row(u)[..d];
                        for j in 0..d {
                            // All-ones bit mask when the value survives.
                            let m = (inside(row[j], lo[j], hi[j]) as u32).wrapping_neg();
                            orow[j] += f32::from_bits(row[j].to_bits() & m);
                            counts[j] += f32::from_bits(1.0f32.to_bits() & m);
                        }
                    }
                    let own = values.row(v);
                    for j in 0..d {
                        discarded += (nbr.len() - counts[j] as usize) as u64;
                        orow[j] = if counts[j] == 0.0 { own[j] } else { orow[j] / counts[j] };
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded,
                })
            }
            Kernel::Dynamic => {
                let center = center.ok_or_else(|| {
                    Error::Config("dynamic weight aggregation without a center embedding".into())
                })?;
                check(values, nb, Some(center.len()))?;
                let weights = node_weights(values, center);
                let mut out = DenseMatrix::zeros(n, d);
                let mut acc = vec![0.0f64; d];
                for v in 0..n {
                    let nbr = nb.of(v);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let mut total = 0.0f64;
                    for &u in nbr {
                        let w = weights[u];
                        if w > 0.0 {
                            total += w;
                            for (a, &x) in acc.iter_mut().zip(values.row(u)) {
                                *a += w * x as f64;
                            }
                        }
                    }
                    let orow = out.row_mut(v);
                    if total > 0.0 {
                        for (o, &a) in orow.iter_mut().zip(&acc) {
                            *o = (a / total) as f32;
                        }
                    } else {
                        orow.copy_from_slice(values.row(v));
                    }
                }
                Ok(KernelOutput {
                    values: out,
                    discarded: 0,
                })
            }
        }
    }

    /// Gradient w.r.t. the aggregated values (and the center, for
    /// [`Kernel::Dynamic`]).
    pub fn backward(
        &self,
        grad: &DenseMatrix,
        values: &DenseMatrix,
        nb: &Neighborhoods,
        center: Option<&[f32]>,
    ) -> (DenseMatrix, Option<Vec<f32>>) {
        let d = values.cols();
        let n = nb.num_targets();
        let mut gv = DenseMatrix::zeros(values.rows(), d);
        let add_row = |gv: &mut DenseMatrix, u: usize, g: &[f32], scale: f32| {
            for (o, &x) in gv.row_mut(u).iter_mut().zip(g) {
                *o += x * scale;
            }
        };
        let mut gc: Option<Vec<f64>> = None;
        let mut buf = Vec::new();
        for v in 0..n {
            let nbr = nb.of(v);
            let g = grad.row(v);
            if nbr.is_empty() {
                add_row(&mut gv, v, g, 1.0);
                continue;
            }
            match self {
                Kernel::Mean => {
                    let s = 1.0 / nbr.len() as f32;
                    for &u in nbr {
                        add_row(&mut gv, u, g, s);
                    }
                }
                Kernel::Sum => {
                    for &u in nbr {
                        add_row(&mut gv, u, g, 1.0);
                    }
                }
                Kernel::Max => {
                    for j in 0..d {
                        let u = max_source(values, nbr, j);
                        let cur = gv.get(u, j);
                        gv.set(u, j, cur + g[j]);
                    }
                }
                Kernel::Median => {
                    let (lo, hi) = median_positions(nbr.len());
                    for j in 0..d {
                        sorted_column(values, nbr, j, &mut buf);
                        let (a, b) = (buf[lo].1, buf[hi].1);
                        if lo == hi {
                            gv.set(a, j, gv.get(a, j) + g[j]);
                        } else {
                            gv.set(a, j, gv.get(a, j) + 0.5 * g[j]);
                            gv.set(b, j, gv.get(b, j) + 0.5 * g[j]);
                        }
                    }
                }
                Kernel::Trimmed { beta } => {
                    let k = trim_count(*beta, nbr.len());
                    let s = 1.0 / (nbr.len() - 2 * k) as f32;
                    for j in 0..d {
                        sorted_column(values, nbr, j, &mut buf);
                        for &(_, u) in &buf[k..nbr.len() - k] {
                            gv.set(u, j, gv.get(u, j) + s * g[j]);
                        }
                    }
                }
                Kernel::SoftMedian { temperature } => {
                    soft_median_backward(values, nbr, v, g, *temperature, &mut gv, &mut buf);
                }
                Kernel::Clip { lo, hi } => {
                    let s = 1.0 / nbr.len() as f32;
                    for &u in nbr {
                        for j in 0..d {
                            let x = values.get(u, j);
                            if x > lo[j] && x < hi[j] {
                                gv.set(u, j, gv.get(u, j) + s * g[j]);
                            }
                        }
                    }
                }
                Kernel::Distribution { mean, std, a, b } => {
                    let (lo, hi) = interval(mean, std, *a, *b);
                    for j in 0..d {
                        let kept: Vec<usize> = nbr
                            .iter()
                            .copied()
                            .filter(|&u| inside(values.get(u, j), lo[j], hi[j]))
                            .collect();
                        if kept.is_empty() {
                            gv.set(v, j, gv.get(v, j) + g[j]);
                        } else {
                            let s = g[j] / kept.len() as f32;
                            for u in kept {
                                gv.set(u, j, gv.get(u, j) + s);
                            }
                        }
                    }
                }
                Kernel::Dynamic => {
                    let center = center.expect("dynamic backward needs the center");
                    let gc = gc.get_or_insert_with(|| vec![0.0; d]);
                    dynamic_backward(values, nbr, v, g, center, &mut gv, gc);
                }
            }
        }
        (gv, gc.map(|c| c.into_iter().map(|x| x as f32).collect()))
    }
}

#[inline]
fn trim_count(beta: f32, n: usize) -> usize {
    let k = (beta as f64 * n as f64).floor() as usize;
    // keep at least one value per dimension
    k.min((n - 1) / 2)
}

/// Source of the per-dimension maximum; NaN wins so corruption propagates.
fn max_source(values: &DenseMatrix, nbr: &[usize], j: usize) -> usize {
    let mut best = nbr[0];
    let mut best_val = values.get(best, j);
    for &u in &nbr[1..] {
        let x = values.get(u, j);
        if best_val.is_nan() {
            break;
        }
        if x > best_val || x.is_nan() {
            best = u;
            best_val = x;
        }
    }
    best
}

struct SoftMedianTarget {
    median: Vec<f32>,
    dists: Vec<f64>,
    weights: Vec<f64>,
}

/// Weights over `nbr` (zero for non-finite distances); `None` if no
/// neighbor has a finite distance.
fn soft_median_target(
    values: &DenseMatrix,
    nbr: &[usize],
    temperature: f32,
    buf: &mut Vec<(f32, usize)>,
) -> Option<SoftMedianTarget> {
    if nbr.is_empty() {
        return None;
    }
    let d = values.cols();
    let (lo, hi) = median_positions(nbr.len());
    let median: Vec<f32> = (0..d)
        .map(|j| {
            sorted_column(values, nbr, j, buf);
            0.5 * buf[lo].0 + 0.5 * buf[hi].0
        })
        .collect();
    let dists: Vec<f64> = nbr
        .iter()
        .map(|&u| {
            values
                .row(u)
                .iter()
                .zip(&median)
                .map(|(&x, &m)| {
                    let diff = x as f64 - m as f64;
                    diff * diff
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let tau = temperature as f64 * (d.max(1) as f64).sqrt();
    let min = dists
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let mut weights: Vec<f64> = dists
        .iter()
        .map(|&x| if x.is_finite() { (-(x - min) / tau).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Some(SoftMedianTarget {
        median,
        dists,
        weights,
    })
}

fn soft_median_backward(
    values: &DenseMatrix,
    nbr: &[usize],
    v: usize,
    g: &[f32],
    temperature: f32,
    gv: &mut DenseMatrix,
    buf: &mut Vec<(f32, usize)>,
) {
    let d = values.cols();
    let Some(sm) = soft_median_target(values, nbr, temperature, buf) else {
        for (o, &x) in gv.row_mut(v).iter_mut().zip(g) {
            *o += x;
        }
        return;
    };
    let tau = temperature as f64 * (d.max(1) as f64).sqrt();
    let dot = |u: usize| -> f64 {
        values
            .row(u)
            .iter()
            .zip(g)
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum()
    };
    let a: Vec<f64> = nbr
        .iter()
        .enumerate()
        .map(|(k, &u)| if sm.weights[k] > 0.0 { dot(u) } else { 0.0 })
        .collect();
    let a_bar: f64 = a.iter().zip(&sm.weights).map(|(x, w)| x * w).sum();
    let mut g_median = vec![0.0f64; d];
    for (k, &u) in nbr.iter().enumerate() {
        let w = sm.weights[k];
        if w == 0.0 {
            continue;
        }
        let row = values.row(u);
        let dz = w * (a[k] - a_bar);
        let dd = -dz / tau;
        let dist = sm.dists[k];
        let gu = gv.row_mut(u);
        for j in 0..d {
            let mut upd = w * g[j] as f64;
            if dist > 0.0 {
                let unit = (row[j] as f64 - sm.median[j] as f64) / dist;
                upd += dd * unit;
                g_median[j] -= dd * unit;
            }
            gu[j] += upd as f32;
        }
    }
    // route the median's gradient to the order statistics it selected
    let (lo, hi) = median_positions(nbr.len());
    for (j, &gm) in g_median.iter().enumerate() {
        sorted_column(values, nbr, j, buf);
        if lo == hi {
            let u = buf[lo].1;
            gv.set(u, j, gv.get(u, j) + gm as f32);
        } else {
            for pos in [lo, hi] {
                let u = buf[pos].1;
                gv.set(u, j, gv.get(u, j) + 0.5 * gm as f32);
            }
        }
    }
}

fn dynamic_backward(
    values: &DenseMatrix,
    nbr: &[usize],
    v: usize,
    g: &[f32],
    center: &[f32],
    gv: &mut DenseMatrix,
    gc: &mut [f64],
) {
    let d = values.cols();
    let weight = |u: usize| -> f64 {
        let mut d2 = 0.0;
        for (&x, &m) in values.row(u).iter().zip(center) {
            if !x.is_finite() {
                return 0.0;
            }
            d2 += (x as f64 - m as f64).powi(2);
        }
        1.0 / (d2 + 1.0)
    };
    let ws: Vec<f64> = nbr.iter().map(|&u| weight(u)).collect();
    let total: f64 = ws.iter().sum();
    if total == 0.0 {
        for (o, &x) in gv.row_mut(v).iter_mut().zip(g) {
            *o += x;
        }
        return;
    }
    let mut out = vec![0.0f64; d];
    for (&u, &w) in nbr.iter().zip(&ws) {
        if w > 0.0 {
            for (o, &x) in out.iter_mut().zip(values.row(u)) {
                *o += w * x as f64;
            }
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    for (&u, &w) in nbr.iter().zip(&ws) {
        if w == 0.0 {
            continue;
        }
        let row = values.row(u);
        // dL/dw_u = g·(h_u − out) / W ; dw/d(d²) = −w²
        let dl_dw: f64 = row
            .iter()
            .zip(&out)
            .zip(g)
            .map(|((&x, &o), &gj)| gj as f64 * (x as f64 - o))
            .sum::<f64>()
            / total;
        let coef = -dl_dw * w * w;
        let gu = gv.row_mut(u);
        for j in 0..d {
            let diff = row[j] as f64 - center[j] as f64;
            gu[j] += (w / total * g[j] as f64 + 2.0 * coef * diff) as f32;
            gc[j] -= 2.0 * coef * diff;
        }
    }
}

// Named wrappers, one per reduction.

pub fn mean(values: &DenseMatrix, nb: &Neighborhoods) -> Result<KernelOutput> {
    Kernel::Mean.forward(values, nb, None)
}

pub fn sum(values: &DenseMatrix, nb: &Neighborhoods) -> Result<KernelOutput> {
    Kernel::Sum.forward(values, nb, None)
}

pub fn max(values: &DenseMatrix, nb: &Neighborhoods) -> Result<KernelOutput> {
    Kernel::Max.forward(values, nb, None)
}

pub fn median(values: &DenseMatrix, nb: &Neighborhoods) -> Result<KernelOutput> {
    Kernel::Median.forward(values, nb, None)
}

pub fn trimmed_mean(values: &DenseMatrix, nb: &Neighborhoods, beta: f32) -> Result<KernelOutput> {
    Kernel::Trimmed { beta }.forward(values, nb, None)
}

pub fn soft_median(values: &DenseMatrix, nb: &Neighborhoods, temperature: f32) -> Result<KernelOutput> {
    Kernel::SoftMedian { temperature }.forward(values, nb, None)
}

pub fn activation_clip(values: &DenseMatrix, nb: &Neighborhoods, lo: &[f32], hi: &[f32]) -> Result<KernelOutput> {
    Kernel::Clip {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
    }
    .forward(values, nb, None)
}

pub fn distribution(
    values: &DenseMatrix,
    nb: &Neighborhoods,
    mean: &[f32],
    std: &[f32],
    a: f32,
    b: f32,
) -> Result<KernelOutput> {
    Kernel::Distribution {
        mean: mean.to_vec(),
        std: std.to_vec(),
        a,
        b,
    }
    .forward(values, nb, None)
}

pub fn dynamic_weight(values: &DenseMatrix, nb: &Neighborhoods, center: &[f32]) -> Result<KernelOutput> {
    Kernel::Dynamic.forward(values, nb, Some(center))
}

/// Single-pool version of distribution trimming: mean of the values
/// strictly inside `(mean − a·std, mean + b·std)` and the number discarded.
/// Returns `None` for the mean when nothing survives.
pub fn distribution_values(values: &[f32], mean: f32, std: f32, a: f32, b: f32) -> (Option<f32>, usize) {
    let (lo, hi) = interval(&[mean], &[std], a, b);
    let mut sum = 0.0f64;
    let mut kept = 0usize;
    for &x in values {
        if inside(x, lo[0], hi[0]) {
            sum += x as f64;
            kept += 1;
        }
    }
    let m = (kept > 0).then(|| (sum / kept as f64) as f32);
    (m, values.len() - kept)
}

impl PartialEq for KernelOutput {
    fn eq(&self, other: &Self) -> bool {
        self.values.bitwise_eq(&other.values) && self.discarded == other.discarded
    }
}
