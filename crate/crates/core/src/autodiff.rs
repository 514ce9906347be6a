//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its forward value; node indices
//! are therefore already a topological order and [`Tape::backward`] walks
//! them once, in reverse. Aggregation kernels plug in through [`Backward`].

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// Returns one optional gradient per input, in the order the inputs were
/// passed to [`Tape::custom`]. `None` means "no contribution".
pub trait Backward {
    fn backward(
        &self,
        grad: &DenseMatrix,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
    ) -> Vec<Option<DenseMatrix>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f32),
    ScaleRows(Var, Vec<f32>),
    MulEntry(Var, Var, usize),
    MulConst(Var, DenseMatrix),
    Relu(Var),
    Map(Var, fn(f32) -> f32),
    Sum(Var),
    RowSum(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
    },
    MeanPool {
        input: Var,
        groups: Vec<usize>,
        counts: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn Backward>,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn relu(x: f32) -> f32 {
    // NaN must survive: corruption is silent, not clamped away.
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Records a leaf. Parameters and constants are both leaves; the caller
    /// decides which gradients to read back.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f32>) -> Result<Var> {
        let src = self.value(a);
        if factors.len() != src.rows() {
            return Err(Error::Shape(format!(
                "{} row factors for {} rows",
                factors.len(),
                src.rows()
            )));
        }
        let mut value = src.clone();
        for (r, &f) in factors.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(value, Op::ScaleRows(a, factors)))
    }

    /// Multiplies every entry of `a` by the 1×1 value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "scalar operand has shape {:?}",
                self.value(s).shape()
            )));
        }
        self.mul_entry(a, s, 0)
    }

    /// Multiplies every entry of `a` by entry `idx` (row-major) of `s`.
    pub fn mul_entry(&mut self, a: Var, s: Var, idx: usize) -> Result<Var> {
        let Some(&factor) = self.value(s).data().get(idx) else {
            return Err(Error::Index {
                index: idx,
                len: self.value(s).len(),
            });
        };
        let value = self.value(a).scale(factor);
        Ok(self.push(value, Op::MulEntry(a, s, idx)))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: DenseMatrix) -> Result<Var> {
        let value = self.value(a).zip_map(&mask, |x, y| x * y)?;
        Ok(self.push(value, Op::MulConst(a, mask)))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(relu);
        self.push(value, Op::Relu(a))
    }

    /// Elementwise `f` with derivative `df`, both evaluated at the input.
    pub fn map(&mut self, a: Var, f: fn(f32) -> f32, df: fn(f32) -> f32) -> Var {
        let value = self.value(a).map(f);
        self.push(value, Op::Map(a, df))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Column vector of row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let sums = self.value(a).row_sums();
        let value = DenseMatrix::new(sums.len(), 1, sums).expect("row sums");
        self.push(value, Op::RowSum(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    /// Mean cross-entropy over `(row, class)` targets, stabilized by
    /// subtracting each row's maximum before exponentiation.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Result<Var> {
        let x = self.value(logits);
        if targets.is_empty() {
            return Err(Error::Contract("cross-entropy over zero targets".into()));
        }
        let mut total = 0.0f64;
        for &(r, c) in &targets {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::Index {
                    index: if r >= x.rows() { r } else { c },
                    len: if r >= x.rows() { x.rows() } else { x.cols() },
                });
            }
            let row = x.row(r);
            total += log_sum_exp(row) - row[c] as f64;
        }
        let value = DenseMatrix::scalar((total / targets.len() as f64) as f32);
        Ok(self.push(value, Op::CrossEntropy { logits, targets }))
    }

    /// Averages rows sharing a group id; `groups[i]` is the group of row `i`.
    pub fn mean_pool(&mut self, a: Var, groups: Vec<usize>, num_groups: usize) -> Result<Var> {
        let x = self.value(a);
        if groups.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} group ids for {} rows",
                groups.len(),
                x.rows()
            )));
        }
        let mut counts = vec![0usize; num_groups];
        let mut acc = vec![0.0f64; num_groups * x.cols()];
        for (r, &g) in groups.iter().enumerate() {
            if g >= num_groups {
                return Err(Error::Index {
                    index: g,
                    len: num_groups,
                });
            }
            counts[g] += 1;
            for (c, &v) in x.row(r).iter().enumerate() {
                acc[g * x.cols() + c] += v as f64;
            }
        }
        let cols = x.cols();
        let data = acc
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let n = counts[i / cols.max(1)];
                if n == 0 {
                    0.0
                } else {
                    (s / n as f64) as f32
                }
            })
            .collect();
        let value = DenseMatrix::new(num_groups, cols, data)?;
        Ok(self.push(value, Op::MeanPool { input: a, groups, counts }))
    }

    /// Records an externally defined operation.
    pub fn custom(&mut self, inputs: &[Var], value: DenseMatrix, rule: Box<dyn Backward>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Propagates d(loss)/d(node) back to every node recorded before `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward from a non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; n];
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.local_backward(node, &g)?;
            for (parent, pg) in contributions {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_backward(&self, node: &Node, g: &DenseMatrix) -> Result<Vec<(Var, DenseMatrix)>> {
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![(*a, g.matmul_t(bv)?), (*b, av.t_matmul(g)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.zip_map(bv, |x, y| x * y)?),
                    (*b, g.zip_map(av, |x, y| x * y)?),
                ]
            }
            Op::Scale(a, f) => vec![(*a, g.scale(*f))],
            Op::ScaleRows(a, factors) => {
                let mut ga = g.clone();
                for (r, &f) in factors.iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|v| *v *= f);
                }
                vec![(*a, ga)]
            }
            Op::MulEntry(a, s, idx) => {
                let sv = self.value(*s);
                let factor = sv.data()[*idx];
                let av = self.value(*a);
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum();
                let mut gs = DenseMatrix::zeros(sv.rows(), sv.cols());
                gs.data_mut()[*idx] = ds as f32;
                vec![(*a, g.scale(factor)), (*s, gs)]
            }
            Op::MulConst(a, mask) => vec![(*a, g.zip_map(mask, |x, y| x * y)?)],
            Op::Relu(a) => {
                let av = self.value(*a);
                vec![(*a, g.zip_map(av, |gv, x| if x > 0.0 { gv } else { 0.0 })?)]
            }
            Op::Map(a, df) => {
                let av = self.value(*a);
                vec![(*a, g.zip_map(av, |gv, x| gv * df(x))?)]
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(*a, DenseMatrix::filled(r, c, g.get(0, 0)))]
            }
            Op::RowSum(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(*a, DenseMatrix::from_fn(r, c, |i, _| g.get(i, 0)))]
            }
            Op::Softmax(a) => {
                let s = &node.value;
                let mut ga = DenseMatrix::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let dot: f32 = g.row(r).iter().zip(s.row(r)).map(|(x, y)| x * y).sum();
                    for ((o, &gv), &sv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(s.row(r)) {
                        *o = sv * (gv - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::CrossEntropy { logits, targets } => {
                let x = self.value(*logits);
                let scale = g.get(0, 0) / targets.len() as f32;
                let mut ga = DenseMatrix::zeros(x.rows(), x.cols());
                for &(r, c) in targets {
                    let probs = softmax_row(x.row(r));
                    for (o, p) in ga.row_mut(r).iter_mut().zip(probs) {
                        *o += p * scale;
                    }
                    let cur = ga.get(r, c);
                    ga.set(r, c, cur - scale);
                }
                vec![(*logits, ga)]
            }
            Op::MeanPool {
                input,
                groups,
                counts,
            } => {
                let (r, c) = self.value(*input).shape();
                let ga = DenseMatrix::from_fn(r, c, |i, j| {
                    let grp = groups[i];
                    g.get(grp, j) / counts[grp] as f32
                });
                vec![(*input, ga)]
            }
            Op::Custom { inputs, rule } => {
                let vals: Vec<&DenseMatrix> = inputs.iter().map(|v| self.value(*v)).collect();
                let parts = rule.backward(g, &vals, &node.value);
                if parts.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom backward returned {} gradients for {} inputs",
                        parts.len(),
                        inputs.len()
                    )));
                }
                let mut out = Vec::with_capacity(parts.len());
                for (v, p) in inputs.iter().zip(parts) {
                    if let Some(p) = p {
                        if p.shape() != self.value(*v).shape() {
                            return Err(Error::Shape(format!(
                                "custom gradient {:?} for input {:?}",
                                p.shape(),
                                self.value(*v).shape()
                            )));
                        }
                        out.push((*v, p));
                    }
                }
                out
            }
        };
        Ok(out)
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; all zeros when `v` did not feed the
    /// loss.
    pub fn get(&self, v: Var) -> DenseMatrix {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
            None => panic!("variable {v:?} was recorded after the loss"),
        }
    }
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !max.is_finite() {
        // NaN or all -inf rows: let the value flow to the divergence check
        return row.iter().map(|&v| v as f64).sum::<f64>() + max;
    }
    let s: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    max + s.ln()
}

fn softmax_row(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / total) as f32).collect()
}

fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&softmax_row(x.row(r)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.leaf(DenseMatrix::from_fn(2, 3, |i, j| (i + j) as f32));
        let loss = t.sum(w);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), DenseMatrix::filled(2, 3, 1.0));
    }

    #[test]
    fn squared_norm_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::row_vector(vec![1.0, 2.0]));
        let sq = t.hadamard(x, x).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::row_vector(vec![1.0, 2.0]));
        let unused = t.leaf(DenseMatrix::filled(3, 2, 5.0));
        let loss = t.sum(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(unused), DenseMatrix::zeros(3, 2));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [-50.0, 0.0, 80.0]]).unwrap());
        let s = t.softmax(x);
        for r in t.value(s).row_sums() {
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::row_vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_keeps_nan() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::row_vector(vec![f32::NAN]));
        let y = t.relu(x);
        assert!(t.value(y).get(0, 0).is_nan());
    }

    #[test]
    fn cross_entropy_confident_row() {
        // log(1 + e^-20) ≈ 2.06e-9
        let mut t = Tape::new();
        let x = t.leaf(DenseMatrix::row_vector(vec![20.0, 0.0]));
        let l = t.cross_entropy(x, vec![(0, 0)]).unwrap();
        let v = t.value(l).get(0, 0);
        assert!(v < 1e-3 && v >= 0.0);
        // no overflow for large logits
        let y = t.leaf(DenseMatrix::row_vector(vec![1000.0, 980.0]));
        let l = t.cross_entropy(y, vec![(0, 0)]).unwrap();
        assert!(t.value(l).get(0, 0) < 1e-3);
    }
}
