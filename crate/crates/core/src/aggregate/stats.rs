//! Calibrated per-(layer, dimension) statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Mean and unbiased standard deviation of one layer's aggregation inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub layers: Vec<DimStats>,
}

/// Per-(layer, dimension) clean activation range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipTable {
    pub lo: Vec<Vec<f32>>,
    pub hi: Vec<Vec<f32>>,
}

/// Streaming moments (Welford, in f64) and min/max per layer dimension.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    layers: Vec<LayerAcc>,
}

#[derive(Clone, Debug)]
struct LayerAcc {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    min: Vec<f32>,
    max: Vec<f32>,
}

impl LayerAcc {
    fn new(width: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
            min: vec![f32::INFINITY; width],
            max: vec![f32::NEG_INFINITY; width],
        }
    }
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records rows `rows` of `values` (all rows when `None`) for `layer`.
    pub fn observe(&mut self, layer: usize, values: &DenseMatrix, rows: Option<&[usize]>) -> Result<()> {
        while self.layers.len() <= layer {
            self.layers.push(LayerAcc::new(values.cols()));
        }
        let acc = &mut self.layers[layer];
        if acc.count == 0 && acc.mean.len() != values.cols() {
            *acc = LayerAcc::new(values.cols());
        }
        if acc.mean.len() != values.cols() {
            return Err(Error::Shape(format!(
                "layer {layer} observed with width {} after {}",
                values.cols(),
                acc.mean.len()
            )));
        }
        let mut push = |row: &[f32]| {
            acc.count += 1;
            let n = acc.count as f64;
            for (j, &x) in row.iter().enumerate() {
                let x64 = x as f64;
                let delta = x64 - acc.mean[j];
                acc.mean[j] += delta / n;
                acc.m2[j] += delta * (x64 - acc.mean[j]);
                acc.min[j] = acc.min[j].min(x);
                acc.max[j] = acc.max[j].max(x);
            }
        };
        match rows {
            Some(idx) => idx.iter().for_each(|&r| push(values.row(r))),
            None => values.row_iter().for_each(push),
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<(StatsTable, ClipTable)> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (l, acc) in self.layers.iter().enumerate() {
            if acc.count < 2 {
                return Err(Error::Config(format!(
                    "layer {l} calibrated from {} samples; need at least 2",
                    acc.count
                )));
            }
            let denom = (acc.count - 1) as f64;
            layers.push(DimStats {
                mean: acc.mean.iter().map(|&m| m as f32).collect(),
                std: acc.m2.iter().map(|&m2| (m2 / denom).max(0.0).sqrt() as f32).collect(),
                count: acc.count,
            });
            lo.push(acc.min.clone());
            hi.push(acc.max.clone());
        }
        Ok((StatsTable { layers }, ClipTable { lo, hi }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_dimension_has_zero_std() {
        let mut acc = StatsAccumulator::new();
        acc.observe(0, &DenseMatrix::filled(5, 2, 1.5), None).unwrap();
        let (t, c) = acc.finish().unwrap();
        assert_eq!(t.layers[0].std, vec![0.0, 0.0]);
        assert_eq!(t.layers[0].mean, vec![1.5, 1.5]);
        assert_eq!(c.lo[0], vec![1.5, 1.5]);
    }

    #[test]
    fn two_values_unbiased() {
        let mut acc = StatsAccumulator::new();
        let m = DenseMatrix::from_rows(&[[0.0], [2.0]]).unwrap();
        acc.observe(0, &m, None).unwrap();
        let (t, _) = acc.finish().unwrap();
        assert_eq!(t.layers[0].mean, vec![1.0]);
        assert!((t.layers[0].std[0] - 2f32.sqrt()).abs() < 1e-7);
        assert_eq!(t.layers[0].count, 2);
    }

    #[test]
    fn needs_two_samples() {
        let mut acc = StatsAccumulator::new();
        acc.observe(0, &DenseMatrix::zeros(1, 3), None).unwrap();
        assert!(matches!(acc.finish(), Err(Error::Config(_))));
    }

    #[test]
    fn row_subset() {
        let mut acc = StatsAccumulator::new();
        let m = DenseMatrix::from_rows(&[[1.0], [100.0], [3.0]]).unwrap();
        acc.observe(0, &m, Some(&[0, 2])).unwrap();
        let (t, c) = acc.finish().unwrap();
        assert_eq!(t.layers[0].mean, vec![2.0]);
        assert_eq!(c.hi[0], vec![3.0]);
    }
}
