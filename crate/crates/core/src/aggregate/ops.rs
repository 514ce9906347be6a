//! Aggregation recorded on a gradient tape.

use std::rc::Rc;

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

use super::kernels::Kernel;
use super::{Aggregator, DimStats, Mode, Neighborhoods, TrimCounts};

/// Learned and calibrated state one layer's aggregator may need.
#[derive(Clone, Copy, Default)]
pub struct LayerAggState<'a> {
    pub stats: Option<&'a DimStats>,
    pub clip: Option<(&'a [f32], &'a [f32])>,
    /// 1×d center embedding on the tape.
    pub center: Option<Var>,
    /// 1×3 combination scalars on the tape.
    pub combine: Option<Var>,
}

struct KernelOp {
    kernel: Kernel,
    nb: Rc<Neighborhoods>,
}

impl Backward for KernelOp {
    fn backward(&self, grad: &DenseMatrix, inputs: &[&DenseMatrix], _: &DenseMatrix) -> Vec<Option<DenseMatrix>> {
        let center = inputs.get(1).map(|c| c.data());
        let (gv, gc) = self.kernel.backward(grad, inputs[0], &self.nb, center);
        let mut out = vec![Some(gv)];
        if inputs.len() > 1 {
            out.push(gc.map(DenseMatrix::row_vector));
        }
        out
    }
}

fn run_kernel(tape: &mut Tape, kernel: Kernel, values: Var, nb: &Rc<Neighborhoods>, center: Option<Var>) -> Result<(Var, u64)> {
    let out = {
        let c = center.map(|c| tape.value(c).data().to_vec());
        kernel.forward(tape.value(values), nb, c.as_deref())?
    };
    let inputs: Vec<Var> = std::iter::once(values).chain(center).collect();
    let var = tape.custom(
        &inputs,
        out.values,
        Box::new(KernelOp {
            kernel,
            nb: Rc::clone(nb),
        }),
    );
    Ok((var, out.discarded))
}

/// Cosine pruning followed by mean aggregation, recorded as a mean over
/// the pruned neighborhoods.
fn cosine_on_tape(tape: &mut Tape, values: Var, cosine_input: &DenseMatrix, nb: &Neighborhoods, alpha: f32) -> Result<(Var, usize)> {
    let (pruned, dropped) = nb.prune_by_cosine(cosine_input, alpha)?;
    let (var, _) = run_kernel(tape, Kernel::Mean, values, &Rc::new(pruned), None)?;
    Ok((var, dropped))
}

fn distribution_kernel(mode: Mode, stats: Option<&DimStats>, a: f32, b: f32) -> Result<Kernel> {
    if !mode.calibrated() {
        return Ok(Kernel::Mean);
    }
    let s = stats.ok_or_else(|| {
        Error::Config("distribution aggregation before calibration (no statistics)".into())
    })?;
    Ok(Kernel::Distribution {
        mean: s.mean.clone(),
        std: s.std.clone(),
        a,
        b,
    })
}

fn need_center(state: &LayerAggState<'_>) -> Result<Var> {
    state
        .center
        .ok_or_else(|| Error::Config("dynamic weight aggregation without a center embedding".into()))
}

/// Aggregates `values` over `nb` on the tape.
///
/// `cosine_input` holds the embeddings cosine pruning compares (the layer
/// input); pruning never alters `nb` itself.
pub fn aggregate_on_tape(
    tape: &mut Tape,
    agg: &Aggregator,
    mode: Mode,
    values: Var,
    cosine_input: &DenseMatrix,
    nb: &Rc<Neighborhoods>,
    state: LayerAggState<'_>,
) -> Result<(Var, TrimCounts)> {
    let d = tape.value(values).cols() as u64;
    let slots = nb.num_slots() as u64 * d;
    let single = |tape: &mut Tape, kernel: Kernel, center: Option<Var>| -> Result<(Var, TrimCounts)> {
        let (var, discarded) = run_kernel(tape, kernel, values, nb, center)?;
        Ok((var, TrimCounts { discarded, total: slots }))
    };
    match *agg {
        Aggregator::Mean => single(tape, Kernel::Mean, None),
        Aggregator::Sum => single(tape, Kernel::Sum, None),
        Aggregator::Max => single(tape, Kernel::Max, None),
        Aggregator::Median => single(tape, Kernel::Median, None),
        Aggregator::TrimmedMean { beta } => single(tape, Kernel::Trimmed { beta }, None),
        Aggregator::SoftMedian { temperature } => single(tape, Kernel::SoftMedian { temperature }, None),
        Aggregator::ActivationClip => {
            let kernel = if mode.calibrated() {
                let (lo, hi) = state.clip.ok_or_else(|| {
                    Error::Config("activation clipping before calibration (no ranges)".into())
                })?;
                Kernel::Clip {
                    lo: lo.to_vec(),
                    hi: hi.to_vec(),
                }
            } else {
                Kernel::Mean
            };
            single(tape, kernel, None)
        }
        Aggregator::Distribution { a, b } => single(tape, distribution_kernel(mode, state.stats, a, b)?, None),
        Aggregator::DynamicWeight => {
            let center = need_center(&state)?;
            single(tape, Kernel::Dynamic, Some(center))
        }
        Aggregator::Cosine { alpha } => {
            let (var, dropped) = cosine_on_tape(tape, values, cosine_input, nb, alpha)?;
            Ok((
                var,
                TrimCounts {
                    discarded: dropped as u64 * d,
                    total: slots,
                },
            ))
        }
        Aggregator::Combined { a, b, alpha } => {
            let combine = state
                .combine
                .ok_or_else(|| Error::Config("combined aggregation without scalars".into()))?;
            if tape.value(combine).len() != 3 {
                return Err(Error::Shape(format!(
                    "combination needs 3 scalars, got {}",
                    tape.value(combine).len()
                )));
            }
            let center = need_center(&state)?;
            let (dist, dist_drop) = run_kernel(tape, distribution_kernel(mode, state.stats, a, b)?, values, nb, None)?;
            let (dynw, _) = run_kernel(tape, Kernel::Dynamic, values, nb, Some(center))?;
            let (cos, dropped) = cosine_on_tape(tape, values, cosine_input, nb, alpha)?;
            let t0 = tape.mul_entry(dist, combine, 0)?;
            let t1 = tape.mul_entry(dynw, combine, 1)?;
            let t2 = tape.mul_entry(cos, combine, 2)?;
            let s01 = tape.add(t0, t1)?;
            let out = tape.add(s01, t2)?;
            Ok((
                out,
                TrimCounts {
                    discarded: dist_drop + dropped as u64 * d,
                    total: 3 * slots,
                },
            ))
        }
    }
}
