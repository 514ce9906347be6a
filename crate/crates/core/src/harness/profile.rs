//! Aggregation latency versus graph size.

use std::rc::Rc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_on_tape, Aggregator, LayerAggState, Mode, Neighborhoods, StatsAccumulator};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::synth::graph_with_edge_slots;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSpec {
    pub aggregators: Vec<Aggregator>,
    /// Target directed edge-slot counts.
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub mean_degree: f64,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            aggregators: vec![
                Aggregator::Mean,
                Aggregator::distribution(),
                Aggregator::DynamicWeight,
                Aggregator::cosine(),
                Aggregator::Median,
            ],
            sizes: vec![10_000, 30_000, 100_000],
            dim: 16,
            mean_degree: 10.0,
            warmup: 3,
            iters: 30,
            seed: 0,
        }
    }
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < 3 || self.iters < 30 {
            return Err(Error::Config(format!(
                "profiling needs >= 3 warmup and >= 30 measured iterations (got {} / {})",
                self.warmup, self.iters
            )));
        }
        if self.aggregators.is_empty() || self.sizes.is_empty() || self.dim == 0 {
            return Err(Error::Config("profile grids must be non-empty".into()));
        }
        for a in &self.aggregators {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub aggregator: String,
    pub edges: usize,
    pub nodes: usize,
    pub median_us: f64,
    /// Median latency divided by mean aggregation's at this size.
    pub ratio_vs_mean: f64,
}

/// Least-squares line `latency = intercept + slope · edges`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub aggregator: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub rows: Vec<ProfileRow>,
    pub fits: Vec<LinearFit>,
}

impl ProfileTable {
    pub fn row(&self, aggregator: &str, edges: usize) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.aggregator == aggregator && r.edges == edges)
    }

    pub fn fit(&self, aggregator: &str) -> Option<&LinearFit> {
        self.fits.iter().find(|f| f.aggregator == aggregator)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times one aggregation stage (everything inside [`aggregate_on_tape`],
/// including cosine pruning and dynamic weights) per aggregator and size.
pub fn profile(spec: &ProfileSpec) -> Result<ProfileTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (si, &size) in spec.sizes.iter().enumerate() {
        let g = graph_with_edge_slots(size, spec.mean_degree, spec.dim, spec.seed.wrapping_add(si as u64))?;
        let n = g.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA5A5);
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        let values = DenseMatrix::from_fn(n, spec.dim, |_, _| normal.sample(&mut rng));
        let mut acc = StatsAccumulator::new();
        acc.observe(0, &values, None)?;
        let (stats, clip) = acc.finish()?;
        let nb = Rc::new(Neighborhoods::from_graph(&g, true));
        let edges = g.num_edge_slots();

        // Round-robin over aggregators so drift in machine load hits
        // every aggregator alike.
        let mut samples = vec![Vec::with_capacity(spec.iters); spec.aggregators.len()];
        for it in 0..spec.warmup + spec.iters {
            for (agg, out_samples) in spec.aggregators.iter().zip(samples.iter_mut()) {
                let mut tape = Tape::new();
                let v = tape.leaf(values.clone());
                let center = tape.leaf(DenseMatrix::row_vector(stats.layers[0].mean.clone()));
                let combine = tape.leaf(DenseMatrix::filled(1, 3, 1.0 / 3.0));
                let state = LayerAggState {
                    stats: Some(&stats.layers[0]),
                    clip: Some((&clip.lo[0], &clip.hi[0])),
                    center: Some(center),
                    combine: Some(combine),
                };
                let t0 = Instant::now();
                let out = aggregate_on_tape(&mut tape, agg, Mode::Infer, v, &values, &nb, state)?;
                let dt = t0.elapsed();
                std::hint::black_box(&out);
                if it >= spec.warmup {
                    out_samples.push(dt.as_secs_f64() * 1e6);
                }
            }
        }
        let medians: Vec<f64> = samples.iter_mut().map(|s| median(s)).collect();
        let base = spec
            .aggregators
            .iter()
            .position(|a| *a == Aggregator::Mean)
            .map(|i| medians[i]);
        for (agg, &m) in spec.aggregators.iter().zip(&medians) {
            rows.push(ProfileRow {
                aggregator: agg.to_string(),
                edges,
                nodes: n,
                median_us: m,
                ratio_vs_mean: base.map_or(f64::NAN, |b| m / b),
            });
        }
    }
    let fits = spec
        .aggregators
        .iter()
        .map(|agg| {
            let name = agg.to_string();
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.aggregator == name)
                .map(|r| (r.edges as f64, r.median_us))
                .collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (slope, intercept, r2) = linear_fit(&xs, &ys);
            LinearFit {
                aggregator: name,
                slope,
                intercept,
                r2,
            }
        })
        .collect();
    Ok(ProfileTable { rows, fits })
}
