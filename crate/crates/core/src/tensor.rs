//! Dense row-major `f32` matrices.
//!
//! Every stored value is a 32-bit IEEE-754 word, which is the unit the fault
//! injector flips bits in. Arithmetic never checks for non-finite values:
//! NaN and infinity flow through like they would on real hardware.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            if r > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        if self.rows > 8 {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f32) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn row_vector(values: Vec<f32>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f32) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    /// Compares bit patterns, so NaN payloads and signed zeros must match too.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0f32; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0f32; n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                let b = other.row(j);
                out.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`; shapes must already agree.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    /// Sum of all entries, accumulated in f64.
    pub fn sum(&self) -> f32 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() as f32
    }

    pub fn row_sums(&self) -> Vec<f32> {
        self.row_iter()
            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32)
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Index of the largest entry in row `r`; ties go to the lowest index and
    /// NaN entries never win. `None` when the row is empty or all NaN.
    pub fn argmax_row(&self, r: usize) -> Option<usize> {
        let mut best = None;
        let mut best_val = f32::NEG_INFINITY;
        for (i, &v) in self.row(r).iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            if best.is_none() || v > best_val {
                best = Some(i);
                best_val = v;
            }
        }
        best
    }

    /// Selects rows by index into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols())
                .map(|p| a.get(i, p) as f64 * b.get(p, j) as f64)
                .sum::<f64>() as f32
        })
    }

    #[test]
    fn identity_matmul() {
        let b = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(DenseMatrix::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn projector_matmul() {
        let p = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let v = DenseMatrix::from_rows(&[[5.0], [7.0]]).unwrap();
        assert_eq!(p.matmul(&v).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = DenseMatrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f32 * 0.37 - 0.8);
        let b = DenseMatrix::from_fn(4, 2, |i, j| ((i * 2 + j * 5) % 7) as f32 * -0.21 + 0.4);
        let fast = a.matmul(&b).unwrap();
        let slow = triple_loop(&a, &b);
        assert!(fast.max_abs_diff(&slow) < 1e-6);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&fast) < 1e-6);
        assert!(a.t_matmul(&b).is_err());
        assert!(a.t_matmul(&a).unwrap().max_abs_diff(&a.transpose().matmul(&a).unwrap()) < 1e-6);
        assert!(a.matmul_t(&a).unwrap().max_abs_diff(&a.matmul(&a.transpose()).unwrap()) < 1e-6);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_associativity_is_bitwise() {
        let a = DenseMatrix::from_fn(3, 3, |i, j| (i as f32 + 1.3) / (j as f32 + 0.7));
        let b = DenseMatrix::from_fn(3, 2, |i, j| (i as f32 - 0.9) * (j as f32 + 2.1));
        let lhs = a.matmul(&DenseMatrix::identity(3)).unwrap().matmul(&b).unwrap();
        assert!(lhs.bitwise_eq(&a.matmul(&b).unwrap()));
    }

    #[test]
    fn nan_and_inf_flow_through() {
        let a = DenseMatrix::from_rows(&[[f32::NAN, 1.0], [f32::INFINITY, 0.0]]).unwrap();
        let out = a.matmul(&DenseMatrix::identity(2)).unwrap();
        assert!(out.get(0, 0).is_nan());
        // inf * 0 is NaN, not a trap
        assert!(out.get(1, 1).is_nan());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let m = DenseMatrix::from_rows(&[[1.0, 3.0, 3.0], [f32::NAN, 0.0, -1.0], [f32::NAN; 3]]).unwrap();
        assert_eq!(m.argmax_row(0), Some(1));
        assert_eq!(m.argmax_row(1), Some(1));
        assert_eq!(m.argmax_row(2), None);
    }
}
