//! Fixtures and f64 reference implementations shared by the integration
//! tests. The references are written from the definitions, independently
//! of the library kernels, and are only ever compared against them.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use robagg::aggregate::StatsTable;
use robagg::graph::{GraphParts, Masks, Task};
use robagg::model::{Arch, Model, ParamKind};
use robagg::{Aggregator, DenseMatrix, Graph};

pub type M = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_m(x: &DenseMatrix) -> M {
    x.row_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn to_dense(x: &M) -> DenseMatrix {
    let rows: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    DenseMatrix::from_rows(&rows).unwrap()
}

pub fn normal_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f32, hi: f32, r: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

// ---------------------------------------------------------------------------
// graphs

pub fn undirected_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut lists = vec![Vec::new(); n];
    for &(a, b) in edges {
        lists[a].push(b);
        lists[b].push(a);
    }
    lists
}

/// Node-task graph with every node in exactly one split, round robin
/// train, train, val, test.
pub fn node_graph(features: DenseMatrix, lists: Vec<Vec<usize>>, labels: Vec<usize>, classes: usize) -> Graph {
    let n = labels.len();
    let masks = Masks {
        train: (0..n).map(|i| i % 4 < 2).collect(),
        val: (0..n).map(|i| i % 4 == 2).collect(),
        test: (0..n).map(|i| i % 4 == 3).collect(),
    };
    Graph::from_parts(GraphParts {
        features,
        neighbors: lists,
        labels,
        num_classes: classes,
        masks,
        directed: false,
        task: Task::Node,
        graph_index: None,
    })
    .unwrap()
}

/// Six nodes: a triangle 0-1-2 hanging off a path 2-3-4-5, random features.
pub fn six_node_graph(dim: usize, seed: u64) -> Graph {
    let lists = undirected_lists(6, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5)]);
    let x = normal_matrix(6, dim, &mut rng(seed));
    node_graph(x, lists, vec![0, 0, 1, 1, 0, 1], 2)
}

pub fn train_targets(g: &Graph) -> Vec<(usize, usize)> {
    Masks::indices(&g.masks().train)
        .into_iter()
        .map(|i| (i, g.labels()[i]))
        .collect()
}

// ---------------------------------------------------------------------------
// reference linear algebra

pub fn matmul(a: &M, b: &M) -> M {
    let k = b.len();
    let cols = if k == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..k).map(|t| row[t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

pub fn relu(a: &M) -> M {
    a.iter().map(|r| r.iter().map(|&x| x.max(0.0)).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn scale_rows(a: &M, f: &[f64]) -> M {
    a.iter()
        .zip(f)
        .map(|(r, &s)| r.iter().map(|&x| x * s).collect())
        .collect()
}

pub fn cross_entropy(logits: &M, targets: &[(usize, usize)]) -> f64 {
    let total: f64 = targets
        .iter()
        .map(|&(r, c)| {
            let row = &logits[r];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            lse - row[c]
        })
        .sum();
    total / targets.len() as f64
}

// ---------------------------------------------------------------------------
// reference reductions; an empty or fully discarded pool yields the
// target's own row

fn column(x: &M, nbr: &[usize], j: usize) -> Vec<f64> {
    nbr.iter().map(|&u| x[u][j]).collect()
}

fn reduce(x: &M, lists: &[Vec<usize>], mut f: impl FnMut(usize, usize, &[usize]) -> Option<f64>) -> M {
    let d = x.first().map_or(0, |r| r.len());
    (0..lists.len())
        .map(|v| {
            (0..d)
                .map(|j| {
                    if lists[v].is_empty() {
                        x[v][j]
                    } else {
                        f(v, j, &lists[v]).unwrap_or(x[v][j])
                    }
                })
                .collect()
        })
        .collect()
}

pub fn ref_mean(x: &M, lists: &[Vec<usize>]) -> M {
    reduce(x, lists, |_, j, nbr| {
        Some(column(x, nbr, j).iter().sum::<f64>() / nbr.len() as f64)
    })
}

pub fn ref_sum(x: &M, lists: &[Vec<usize>]) -> M {
    reduce(x, lists, |_, j, nbr| Some(column(x, nbr, j).iter().sum()))
}

pub fn ref_max(x: &M, lists: &[Vec<usize>]) -> M {
    reduce(x, lists, |_, j, nbr| {
        Some(column(x, nbr, j).into_iter().fold(f64::NEG_INFINITY, f64::max))
    })
}

fn sorted(mut c: Vec<f64>) -> Vec<f64> {
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    c
}

fn median_of(c: Vec<f64>) -> f64 {
    let s = sorted(c);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn ref_median(x: &M, lists: &[Vec<usize>]) -> M {
    reduce(x, lists, |_, j, nbr| Some(median_of(column(x, nbr, j))))
}

pub fn ref_trimmed(x: &M, lists: &[Vec<usize>], beta: f64) -> M {
    reduce(x, lists, |_, j, nbr| {
        let n = nbr.len();
        let k = ((beta * n as f64).floor() as usize).min((n - 1) / 2);
        let s = sorted(column(x, nbr, j));
        let kept = &s[k..n - k];
        Some(kept.iter().sum::<f64>() / kept.len() as f64)
    })
}

pub fn ref_clip(x: &M, lists: &[Vec<usize>], lo: &[f64], hi: &[f64]) -> M {
    reduce(x, lists, |_, j, nbr| {
        let c = column(x, nbr, j);
        Some(c.iter().map(|v| v.clamp(lo[j], hi[j])).sum::<f64>() / c.len() as f64)
    })
}

pub fn ref_distribution(x: &M, lists: &[Vec<usize>], mean: &[f64], std: &[f64], a: f64, b: f64) -> M {
    reduce(x, lists, |_, j, nbr| {
        let (lo, hi) = (mean[j] - a * std[j], mean[j] + b * std[j]);
        // a zero-width interval keeps exactly the values equal to the mean
        let inside = |v: f64| if std[j] == 0.0 { v == mean[j] } else { v > lo && v < hi };
        let kept: Vec<f64> = column(x, nbr, j).into_iter().filter(|&v| inside(v)).collect();
        (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
    })
}

pub fn ref_dynamic(x: &M, lists: &[Vec<usize>], center: &[f64]) -> M {
    let w: Vec<f64> = x
        .iter()
        .map(|r| {
            let d2: f64 = r.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            1.0 / (d2 + 1.0)
        })
        .collect();
    reduce(x, lists, |_, j, nbr| {
        let total: f64 = nbr.iter().map(|&u| w[u]).sum();
        Some(nbr.iter().map(|&u| w[u] * x[u][j]).sum::<f64>() / total)
    })
}

pub fn ref_soft_median(x: &M, lists: &[Vec<usize>], temperature: f64) -> M {
    let d = x.first().map_or(0, |r| r.len());
    let tau = temperature * (d as f64).sqrt();
    (0..lists.len())
        .map(|v| {
            let nbr = &lists[v];
            if nbr.is_empty() {
                return x[v].clone();
            }
            let med: Vec<f64> = (0..d).map(|j| median_of(column(x, nbr, j))).collect();
            let dist: Vec<f64> = nbr
                .iter()
                .map(|&u| x[u].iter().zip(&med).map(|(a, m)| (a - m) * (a - m)).sum::<f64>().sqrt())
                .collect();
            let e: Vec<f64> = dist.iter().map(|&s| (-s / tau).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..d)
                .map(|j| nbr.iter().zip(&e).map(|(&u, &w)| w / z * x[u][j]).sum())
                .collect()
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

pub fn ref_prune(emb: &M, lists: &[Vec<usize>], alpha: f64) -> Vec<Vec<usize>> {
    lists
        .iter()
        .enumerate()
        .map(|(v, nbr)| {
            nbr.iter()
                .copied()
                .filter(|&u| u == v || cosine(&emb[v], &emb[u]) >= alpha)
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// reference model forward

/// Parameters in [`Model::param_kinds`] order, widened to f64.
pub fn model_params(model: &Model) -> Vec<M> {
    model.param_kinds().into_iter().map(|k| to_m(model.param(k))).collect()
}

/// Aggregates one layer with `agg`. `stats` switches the calibrated kinds
/// to their inference behavior; without it they act as the plain mean.
fn ref_aggregate(
    agg: Aggregator,
    values: &M,
    layer_input: &M,
    lists: &[Vec<usize>],
    center: &[f64],
    combine: &[f64],
    stats: Option<(&[f64], &[f64])>,
) -> M {
    let dist = |a: f32, b: f32| match stats {
        Some((m, s)) => ref_distribution(values, lists, m, s, a as f64, b as f64),
        None => ref_mean(values, lists),
    };
    let cos = |alpha: f32| ref_mean(values, &ref_prune(layer_input, lists, alpha as f64));
    match agg {
        Aggregator::Mean | Aggregator::ActivationClip => ref_mean(values, lists),
        Aggregator::Sum => ref_sum(values, lists),
        Aggregator::Max => ref_max(values, lists),
        Aggregator::Median => ref_median(values, lists),
        Aggregator::TrimmedMean { beta } => ref_trimmed(values, lists, beta as f64),
        Aggregator::SoftMedian { temperature } => ref_soft_median(values, lists, temperature as f64),
        Aggregator::Distribution { a, b } => dist(a, b),
        Aggregator::DynamicWeight => ref_dynamic(values, lists, center),
        Aggregator::Cosine { alpha } => cos(alpha),
        Aggregator::Combined { a, b, alpha } => {
            let parts = [dist(a, b), ref_dynamic(values, lists, center), cos(alpha)];
            let mut out = vec![vec![0.0; values[0].len()]; values.len()];
            for (p, &c) in parts.iter().zip(combine) {
                for (o, r) in out.iter_mut().zip(p) {
                    for (x, y) in o.iter_mut().zip(r) {
                        *x += c * y;
                    }
                }
            }
            out
        }
    }
}

/// Logits of `model`'s architecture evaluated with `params` instead of the
/// model's own values, without dropout.
pub fn ref_logits(model: &Model, params: &[M], g: &Graph, stats: Option<&StatsTable>) -> M {
    let kinds = model.param_kinds();
    let p = |k: ParamKind| &params[kinds.iter().position(|&x| x == k).unwrap()];
    let cfg = model.config();
    let n = g.num_nodes();
    let plain = g.neighbor_lists();
    let with_self: Vec<Vec<usize>> = (0..n)
        .map(|v| std::iter::once(v).chain(plain[v].iter().copied()).collect())
        .collect();
    let dtilde: Vec<f64> = (0..n).map(|v| (g.degree(v) + 1) as f64).collect();
    let inv_sqrt: Vec<f64> = dtilde.iter().map(|d| 1.0 / d.sqrt()).collect();
    let sqrt: Vec<f64> = dtilde.iter().map(|d| d.sqrt()).collect();
    let combine = p(ParamKind::Combine)[0].clone();

    let mut h = to_m(g.features());
    let nl = cfg.num_layers();
    for l in 0..nl {
        let center = p(ParamKind::Center { layer: l })[0].clone();
        let st = stats.map(|t| {
            (
                t.layers[l].mean.iter().map(|&x| x as f64).collect::<Vec<_>>(),
                t.layers[l].std.iter().map(|&x| x as f64).collect::<Vec<_>>(),
            )
        });
        let st_ref = st.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice()));
        let mut out = match cfg.arch {
            Arch::Gcn => {
                let z = matmul(&h, p(ParamKind::Weight { layer: l, index: 0 }));
                let y = scale_rows(&z, &inv_sqrt);
                let a = ref_aggregate(cfg.aggregator, &y, &h, &with_self, &center, &combine, st_ref);
                scale_rows(&a, &sqrt)
            }
            Arch::Gin => {
                let a = ref_aggregate(cfg.aggregator, &h, &h, &plain, &center, &combine, st_ref);
                let s = add(&h, &a);
                let t = relu(&matmul(&s, p(ParamKind::Weight { layer: l, index: 0 })));
                matmul(&t, p(ParamKind::Weight { layer: l, index: 1 }))
            }
        };
        if l + 1 < nl {
            out = relu(&out);
        }
        h = out;
    }
    match g.graph_index() {
        Some(gi) => {
            let d = h[0].len();
            let mut acc = vec![vec![0.0; d]; gi.num_graphs];
            let mut counts = vec![0usize; gi.num_graphs];
            for (v, &gid) in gi.node_graph.iter().enumerate() {
                counts[gid] += 1;
                for j in 0..d {
                    acc[gid][j] += h[v][j];
                }
            }
            acc.iter()
                .zip(&counts)
                .map(|(r, &c)| r.iter().map(|x| x / c.max(1) as f64).collect())
                .collect()
        }
        None => h,
    }
}

// ---------------------------------------------------------------------------
// comparison

pub fn max_abs_diff(a: &M, b: &DenseMatrix) -> f64 {
    a.iter()
        .zip(b.row_iter())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, &q)| (p - q as f64).abs()))
        .fold(0.0, f64::max)
}

/// Relative error with a denominator floor, so that entries whose exact
/// value is near zero are judged against the f32 rounding scale of the
/// analytic gradient rather than against zero.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at every entry of `x`.
pub fn numeric_grad(x: &M, h: f64, mut f: impl FnMut(&M) -> f64) -> M {
    let mut g = vec![vec![0.0; x.first().map_or(0, |r| r.len())]; x.len()];
    let mut p = x.clone();
    for r in 0..x.len() {
        for c in 0..x[r].len() {
            p[r][c] = x[r][c] + h;
            let up = f(&p);
            p[r][c] = x[r][c] - h;
            let down = f(&p);
            p[r][c] = x[r][c];
            g[r][c] = (up - down) / (2.0 * h);
        }
    }
    g
}

// ---------------------------------------------------------------------------
// library aggregation over explicit lists

/// Everything an aggregator may need besides the values.
pub struct AggState {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
    pub center: Vec<f32>,
    pub combine: [f32; 3],
}

impl AggState {
    /// Statistics and ranges taken from `values` itself; center at the mean.
    pub fn from_values(values: &DenseMatrix) -> Self {
        let mut acc = robagg::aggregate::StatsAccumulator::new();
        acc.observe(0, values, None).unwrap();
        let (t, c) = acc.finish().unwrap();
        let s = t.layers.into_iter().next().unwrap();
        Self {
            center: s.mean.clone(),
            mean: s.mean,
            std: s.std,
            lo: c.lo[0].clone(),
            hi: c.hi[0].clone(),
            combine: [1.0 / 3.0; 3],
        }
    }
}

/// Runs `agg` in inference mode over `lists`, comparing cosine similarity
/// on `values` themselves. Returns the output and the discarded count.
pub fn aggregate_lists(agg: Aggregator, values: &DenseMatrix, lists: &[Vec<usize>], st: &AggState) -> (DenseMatrix, u64) {
    use robagg::aggregate::{aggregate_on_tape, DimStats, LayerAggState, Neighborhoods};
    use robagg::autodiff::Tape;
    let nb = std::rc::Rc::new(Neighborhoods::from_lists(lists).unwrap());
    let stats = DimStats {
        mean: st.mean.clone(),
        std: st.std.clone(),
        count: 2,
    };
    let mut tape = Tape::new();
    let v = tape.leaf(values.clone());
    let center = tape.leaf(DenseMatrix::row_vector(st.center.clone()));
    let combine = tape.leaf(DenseMatrix::row_vector(st.combine.to_vec()));
    let state = LayerAggState {
        stats: Some(&stats),
        clip: Some((&st.lo, &st.hi)),
        center: Some(center),
        combine: Some(combine),
    };
    let (out, trims) = aggregate_on_tape(&mut tape, &agg, robagg::Mode::Infer, v, values, &nb, state).unwrap();
    (tape.value(out).clone(), trims.discarded)
}

pub fn max_abs_diff_dense(a: &DenseMatrix, b: &DenseMatrix) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            if x == y || (x.is_nan() && y.is_nan()) {
                0.0
            } else {
                let d = (x - y).abs();
                if d.is_nan() { f32::INFINITY } else { d }
            }
        })
        .fold(0.0, f32::max)
}

/// Every aggregator kind with representative hyperparameters.
pub fn all_kinds() -> Vec<Aggregator> {
    vec![
        Aggregator::Mean,
        Aggregator::Max,
        Aggregator::Sum,
        Aggregator::Median,
        Aggregator::TrimmedMean { beta: 0.25 },
        Aggregator::soft_median(),
        Aggregator::ActivationClip,
        Aggregator::Distribution { a: 1.0, b: 1.5 },
        Aggregator::DynamicWeight,
        Aggregator::Cosine { alpha: 0.1 },
        Aggregator::Combined { a: 1.0, b: 1.5, alpha: 0.1 },
    ]
}

// ---------------------------------------------------------------------------
// statistics

/// Pearson chi-squared statistic of `counts` against Binomial(n, p), with
/// ten bins cut at the distribution's deciles. Returns the statistic and the
/// 0.01 critical value for the resulting degrees of freedom.
pub fn binomial_chi_squared(counts: &[u64], n: u64, p: f64) -> (f64, f64) {
    use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
    let b = Binomial::new(p, n).unwrap();
    let mut edges: Vec<u64> = (1..10).map(|i| b.inverse_cdf(i as f64 / 10.0)).collect();
    edges.dedup();
    let mut probs = Vec::new();
    let mut prev = 0.0;
    for &e in &edges {
        let c = b.cdf(e);
        probs.push(c - prev);
        prev = c;
    }
    probs.push(1.0 - prev);
    let mut observed = vec![0u64; probs.len()];
    for &k in counts {
        observed[edges.partition_point(|&e| e < k)] += 1;
    }
    let total = counts.len() as f64;
    let stat = observed
        .iter()
        .zip(&probs)
        .map(|(&o, &q)| {
            let e = q * total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (probs.len() - 1) as f64;
    (stat, ChiSquared::new(dof).unwrap().inverse_cdf(0.99))
}

/// Six-node model with random centers and uneven combination scalars, so
/// every parameter influences the loss.
pub fn fixture_model(arch: Arch, agg: Aggregator, seed: u64) -> Model {
    let g = six_node_graph(4, 11);
    let cfg = robagg::model::ModelConfig::for_graph(arch, &g, agg).with_widths(vec![5, 2]);
    let mut m = Model::new(cfg, seed).unwrap();
    let mut r = rng(seed);
    for l in 0..2 {
        let w = m.param(ParamKind::Center { layer: l }).cols();
        *m.param_mut(ParamKind::Center { layer: l }) = normal_matrix(1, w, &mut r);
    }
    *m.param_mut(ParamKind::Combine) = DenseMatrix::row_vector(vec![0.5, 0.3, 0.2]);
    m
}

/// Per parameter: worst relative error of the tape gradient of the training
/// loss against central differences of [`ref_logits`], and whether any
/// analytic entry is nonzero. Runs on the six-node fixture.
pub fn model_gradient_check(model: &Model, mode: robagg::Mode, step: f64, floor: f64) -> Vec<(ParamKind, f64, bool)> {
    let g = six_node_graph(model.config().in_dim, 11);
    let targets = train_targets(&g);
    let stats = if mode == robagg::Mode::Infer { model.stats() } else { None };

    let mut tape = robagg::autodiff::Tape::new();
    let rec = model.record(&mut tape, &g, mode, None, None).unwrap();
    let loss = tape.cross_entropy(rec.logits, targets.clone()).unwrap();
    let grads = tape.backward(loss).unwrap();

    let params = model_params(model);
    let reference = ref_logits(model, &params, &g, stats);
    assert!(max_abs_diff(&reference, tape.value(rec.logits)) < 1e-4, "reference forward disagrees");
    let mut out = Vec::new();
    for (i, kind) in model.param_kinds().into_iter().enumerate() {
        let analytic = to_m(&grads.get(rec.params[i]));
        let numeric = numeric_grad(&params[i], step, |p| {
            let mut ps = params.clone();
            ps[i] = p.clone();
            cross_entropy(&ref_logits(model, &ps, &g, stats), &targets)
        });
        let mut worst = 0.0f64;
        let mut nonzero = false;
        for (ra, rn) in analytic.iter().zip(&numeric) {
            for (&a, &n) in ra.iter().zip(rn) {
                worst = worst.max(rel_err(a, n, floor));
                nonzero |= a != 0.0;
            }
        }
        out.push((kind, worst, nonzero));
    }
    out
}
