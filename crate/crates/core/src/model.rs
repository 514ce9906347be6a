//! GCN and GIN over pluggable aggregation.
//!
//! GCN layer: `Z = H·W`, `Y = D̃^{-1/2} Z`, `A_v = 𝒜(Y_u : u ∈ N(v) ∪ {v})`,
//! output `√d̃_v · A_v` (then relu unless last). With mean aggregation this is
//! exactly `D̃^{-1/2}(A+I)D̃^{-1/2} H W`.
//!
//! GIN layer: `s = h + 𝒜(h_u : u ∈ N(v))`, output `relu(s·W0)·W1` (then relu
//! unless last). ε is fixed at 0.
//!
//! Graph tasks mean-pool the final node outputs per graph.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    aggregate_on_tape, Aggregator, ClipTable, DimStats, LayerAggState, Mode, Neighborhoods, StatsTable,
    TrimCounts,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fault::{inject_matrix_in_place, EmbeddingHook, InjectionReport};
use crate::graph::{Graph, Task};
use crate::tensor::DenseMatrix;

pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_DROPOUT: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gin,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gin => "gin",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gin" => Ok(Arch::Gin),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_dim: usize,
    /// Output width of each layer; the last equals the number of classes.
    pub widths: Vec<usize>,
    pub aggregator: Aggregator,
    pub dropout: f32,
    pub task: Task,
}

impl ModelConfig {
    /// Two layers of width [`DEFAULT_WIDTH`], dropout [`DEFAULT_DROPOUT`].
    pub fn new(arch: Arch, in_dim: usize, classes: usize, aggregator: Aggregator, task: Task) -> Self {
        Self {
            arch,
            in_dim,
            widths: vec![DEFAULT_WIDTH, classes],
            aggregator,
            dropout: DEFAULT_DROPOUT,
            task,
        }
    }

    pub fn for_graph(arch: Arch, graph: &Graph, aggregator: Aggregator) -> Self {
        Self::new(arch, graph.num_features(), graph.num_classes(), aggregator, graph.task())
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_dropout(mut self, dropout: f32) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    /// Input width of layer `l`.
    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.in_dim
        } else {
            self.widths[l - 1]
        }
    }

    /// Width of the values layer `l` aggregates.
    pub fn agg_width(&self, l: usize) -> usize {
        match self.arch {
            Arch::Gcn => self.widths[l],
            Arch::Gin => self.layer_in(l),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.widths.len()) {
            return Err(Error::Config(format!("{} layers; supported: 2 or 3", self.widths.len())));
        }
        if self.in_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.aggregator.validate()
    }
}

/// Trainable parameter identity, in [`Model::param_kinds`] order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight { layer: usize, index: usize },
    Center { layer: usize },
    Combine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// GCN: `[W]`; GIN: `[W0, W1]`.
    pub weights: Vec<DenseMatrix>,
    /// 1×d center embedding for dynamic weighting.
    pub center: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub layers: Vec<Layer>,
    /// 1×3 combination scalars.
    pub combine: DenseMatrix,
    stats: Option<StatsTable>,
    clip: Option<ClipTable>,
    /// Per layer, per weight: 1 keeps, 0 pins to zero.
    masks: Option<Vec<Vec<DenseMatrix>>>,
    /// Whether the centers were learned (otherwise calibration sets them).
    pub center_trained: bool,
}

/// Values from a forward pass without gradient tracking.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: DenseMatrix,
    /// Output of each layer, after hooks; the last is per node.
    pub layer_outputs: Vec<DenseMatrix>,
    /// Values each layer aggregated.
    pub agg_inputs: Vec<DenseMatrix>,
    pub trims: TrimCounts,
    /// Wall-clock time spent inside aggregation.
    pub agg_time: Duration,
}

/// A forward pass recorded on a tape.
pub struct Recorded {
    pub logits: Var,
    /// Parameter leaves in [`Model::param_kinds`] order.
    pub params: Vec<Var>,
    pub layer_outputs: Vec<Var>,
    pub agg_inputs: Vec<Var>,
    pub trims: TrimCounts,
    pub agg_time: Duration,
}

/// Outcome of [`Model::magnitude_prune`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneReport {
    pub total: usize,
    pub pruned: usize,
    /// Exact fraction of weights equal to zero afterwards.
    pub achieved: f64,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt() as f32;
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..config.num_layers())
            .map(|l| {
                let (fi, fo) = (config.layer_in(l), config.widths[l]);
                let weights = match config.arch {
                    Arch::Gcn => vec![glorot(fi, fo, &mut rng)],
                    Arch::Gin => vec![glorot(fi, fo, &mut rng), glorot(fo, fo, &mut rng)],
                };
                Layer {
                    weights,
                    center: DenseMatrix::zeros(1, config.agg_width(l)),
                }
            })
            .collect();
        Ok(Self {
            config,
            layers,
            combine: DenseMatrix::filled(1, 3, 1.0 / 3.0),
            stats: None,
            clip: None,
            masks: None,
            center_trained: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn aggregator(&self) -> Aggregator {
        self.config.aggregator
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Replaces the aggregator, keeping every learned and calibrated tensor.
    pub fn set_aggregator(&mut self, aggregator: Aggregator) -> Result<()> {
        aggregator.validate()?;
        self.config.aggregator = aggregator;
        Ok(())
    }

    pub fn with_aggregator(&self, aggregator: Aggregator) -> Result<Self> {
        let mut m = self.clone();
        m.set_aggregator(aggregator)?;
        Ok(m)
    }

    pub fn stats(&self) -> Option<&StatsTable> {
        self.stats.as_ref()
    }

    pub fn clip(&self) -> Option<&ClipTable> {
        self.clip.as_ref()
    }

    pub fn is_calibrated(&self) -> bool {
        self.stats.is_some()
    }

    /// Installs calibrated statistics; centers that were not learned are set
    /// to the calibrated means.
    pub fn set_calibration(&mut self, stats: StatsTable, clip: ClipTable) -> Result<()> {
        if stats.layers.len() != self.num_layers() || clip.lo.len() != self.num_layers() {
            return Err(Error::Shape("calibration layer count mismatch".into()));
        }
        for (l, s) in stats.layers.iter().enumerate() {
            let w = self.config.agg_width(l);
            if s.mean.len() != w || s.std.len() != w || clip.lo[l].len() != w || clip.hi[l].len() != w {
                return Err(Error::Shape(format!("calibration width mismatch at layer {l}")));
            }
        }
        if !self.center_trained {
            for (layer, s) in self.layers.iter_mut().zip(&stats.layers) {
                layer.center = DenseMatrix::row_vector(s.mean.clone());
            }
        }
        self.stats = Some(stats);
        self.clip = Some(clip);
        Ok(())
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut kinds = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            kinds.extend((0..layer.weights.len()).map(|index| ParamKind::Weight { layer: l, index }));
            kinds.push(ParamKind::Center { layer: l });
        }
        kinds.push(ParamKind::Combine);
        kinds
    }

    pub fn param(&self, kind: ParamKind) -> &DenseMatrix {
        match kind {
            ParamKind::Weight { layer, index } => &self.layers[layer].weights[index],
            ParamKind::Center { layer } => &self.layers[layer].center,
            ParamKind::Combine => &self.combine,
        }
    }

    pub fn param_mut(&mut self, kind: ParamKind) -> &mut DenseMatrix {
        match kind {
            ParamKind::Weight { layer, index } => &mut self.layers[layer].weights[index],
            ParamKind::Center { layer } => &mut self.layers[layer].center,
            ParamKind::Combine => &mut self.combine,
        }
    }

    /// Weight matrices in canonical order (layer, then index).
    pub fn weight_matrices(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.layers.iter().flat_map(|l| l.weights.iter())
    }

    pub fn weight_matrices_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut())
    }

    pub fn num_weights(&self) -> usize {
        self.weight_matrices().map(DenseMatrix::len).sum()
    }

    /// Flips bits of every weight matrix independently with probability `ber`.
    pub fn inject_weights<R: Rng + ?Sized>(&mut self, ber: f64, rng: &mut R) -> InjectionReport {
        let mut report = InjectionReport::default();
        for w in self.weight_matrices_mut() {
            report.merge(&inject_matrix_in_place(w, ber, rng));
        }
        report
    }

    /// Zeroes the globally smallest-magnitude `sparsity` fraction of weights
    /// (ties by position) and pins them to zero for later updates.
    pub fn magnitude_prune(&mut self, sparsity: f64) -> Result<PruneReport> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::Param(format!("sparsity {sparsity} outside [0, 1)")));
        }
        let total = self.num_weights();
        let k = ((sparsity * total as f64).round() as usize).min(total);
        let mut order: Vec<(f32, usize)> =
            self.weight_matrices().flat_map(|w| w.data().iter().map(|x| x.abs())).zip(0..).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut keep = vec![true; total];
        for &(_, i) in &order[..k] {
            keep[i] = false;
        }
        let mut masks = self.masks.take().unwrap_or_else(|| {
            self.layers
                .iter()
                .map(|l| l.weights.iter().map(|w| DenseMatrix::filled(w.rows(), w.cols(), 1.0)).collect())
                .collect()
        });
        let mut pos = 0;
        for (layer, lmask) in self.layers.iter_mut().zip(masks.iter_mut()) {
            for (w, mask) in layer.weights.iter_mut().zip(lmask.iter_mut()) {
                for (x, m) in w.data_mut().iter_mut().zip(mask.data_mut()) {
                    if !keep[pos] {
                        *x = 0.0;
                        *m = 0.0;
                    }
                    pos += 1;
                }
            }
        }
        self.masks = Some(masks);
        let zeros = self.weight_matrices().flat_map(|w| w.data()).filter(|&&x| x == 0.0).count();
        Ok(PruneReport {
            total,
            pruned: k,
            achieved: zeros as f64 / total.max(1) as f64,
        })
    }

    pub fn prune_masks(&self) -> Option<&Vec<Vec<DenseMatrix>>> {
        self.masks.as_ref()
    }

    /// Re-zeroes pruned positions.
    pub fn apply_masks(&mut self) {
        if let Some(masks) = &self.masks {
            for (layer, lmask) in self.layers.iter_mut().zip(masks) {
                for (w, mask) in layer.weights.iter_mut().zip(lmask) {
                    for (x, &m) in w.data_mut().iter_mut().zip(mask.data()) {
                        if m == 0.0 {
                            *x = 0.0;
                        }
                    }
                }
            }
        }
    }

    /// Whether position `i` of the parameter `kind` is pinned to zero.
    pub fn is_masked(&self, kind: ParamKind, i: usize) -> bool {
        match (kind, &self.masks) {
            (ParamKind::Weight { layer, index }, Some(m)) => m[layer][index].data()[i] == 0.0,
            _ => false,
        }
    }

    fn check_graph(&self, graph: &Graph) -> Result<()> {
        if graph.num_features() != self.config.in_dim {
            return Err(Error::Shape(format!(
                "graph has {} features, model expects {}",
                graph.num_features(),
                self.config.in_dim
            )));
        }
        if graph.task() != self.config.task {
            return Err(Error::Shape(format!(
                "{} task graph for a {} task model",
                graph.task().as_str(),
                self.config.task.as_str()
            )));
        }
        Ok(())
    }

    /// Records a forward pass. `Mode::Train` with nonzero dropout needs
    /// `rng`. Hook-modified buffers are re-entered as constants.
    pub fn record(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        mode: Mode,
        mut hook: Option<&mut dyn EmbeddingHook>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Recorded> {
        self.check_graph(graph)?;
        let nl = self.num_layers();
        if let Some(h) = hook.as_deref() {
            if let Some(p) = h.max_point() {
                if p > nl {
                    return Err(Error::Config(format!(
                        "hook expects point {p}, model has {nl} layer boundaries"
                    )));
                }
            }
        }
        let dropout = if mode == Mode::Train { self.config.dropout } else { 0.0 };
        if dropout > 0.0 && rng.is_none() {
            return Err(Error::Contract("training-mode dropout needs an RNG".into()));
        }

        let params: Vec<Var> = self.param_kinds().into_iter().map(|k| tape.leaf(self.param(k).clone())).collect();
        let kinds = self.param_kinds();
        let pvar = |kind: ParamKind| params[kinds.iter().position(|&k| k == kind).unwrap()];
        let combine = pvar(ParamKind::Combine);

        let nb = Rc::new(Neighborhoods::from_graph(graph, self.config.arch == Arch::Gcn));
        let (inv_sqrt, sqrt): (Vec<f32>, Vec<f32>) = (0..graph.num_nodes())
            .map(|v| {
                let d = (graph.degree(v) + 1) as f64;
                ((1.0 / d.sqrt()) as f32, d.sqrt() as f32)
            })
            .unzip();

        let mut x = graph.features().clone();
        if let Some(h) = hook.as_deref_mut() {
            h.intercept(0, &mut x);
        }
        let mut h = tape.leaf(x);
        let mut layer_outputs = Vec::with_capacity(nl);
        let mut agg_inputs = Vec::with_capacity(nl);
        let mut trims = TrimCounts::default();
        let mut agg_time = Duration::ZERO;

        for l in 0..nl {
            let last = l + 1 == nl;
            let state = LayerAggState {
                stats: self.stats.as_ref().map(|t| &t.layers[l]),
                clip: self.clip.as_ref().map(|c| (c.lo[l].as_slice(), c.hi[l].as_slice())),
                center: Some(pvar(ParamKind::Center { layer: l })),
                combine: Some(combine),
            };
            let cos_input = tape.value(h).clone();
            let hin = if dropout > 0.0 {
                let r = rng.as_deref_mut().unwrap();
                let keep = 1.0 - dropout;
                let v = tape.value(h);
                let mask = DenseMatrix::from_fn(v.rows(), v.cols(), |_, _| {
                    if r.random::<f32>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                tape.mul_const(h, mask)?
            } else {
                h
            };
            let mut out = match self.config.arch {
                Arch::Gcn => {
                    let w = pvar(ParamKind::Weight { layer: l, index: 0 });
                    let z = tape.matmul(hin, w)?;
                    let y = tape.scale_rows(z, inv_sqrt.clone())?;
                    agg_inputs.push(y);
                    let t0 = Instant::now();
                    let (a, t) = aggregate_on_tape(tape, &self.config.aggregator, mode, y, &cos_input, &nb, state)?;
                    agg_time += t0.elapsed();
                    trims.add(t);
                    tape.scale_rows(a, sqrt.clone())?
                }
                Arch::Gin => {
                    let w0 = pvar(ParamKind::Weight { layer: l, index: 0 });
                    let w1 = pvar(ParamKind::Weight { layer: l, index: 1 });
                    agg_inputs.push(hin);
                    let t0 = Instant::now();
                    let (a, t) = aggregate_on_tape(tape, &self.config.aggregator, mode, hin, &cos_input, &nb, state)?;
                    agg_time += t0.elapsed();
                    trims.add(t);
                    let s = tape.add(hin, a)?;
                    let t0 = tape.matmul(s, w0)?;
                    let t0 = tape.relu(t0);
                    tape.matmul(t0, w1)?
                }
            };
            if !last {
                out = tape.relu(out);
            }
            if let Some(hk) = hook.as_deref_mut() {
                let mut v = tape.value(out).clone();
                hk.intercept(l + 1, &mut v);
                out = tape.leaf(v);
            }
            layer_outputs.push(out);
            h = out;
        }

        let logits = match self.config.task {
            Task::Node => h,
            Task::Graph => {
                let gi = graph
                    .graph_index()
                    .ok_or_else(|| Error::Contract("graph task without graph index".into()))?;
                tape.mean_pool(h, gi.node_graph.clone(), gi.num_graphs)?
            }
        };
        Ok(Recorded {
            logits,
            params,
            layer_outputs,
            agg_inputs,
            trims,
            agg_time,
        })
    }

    /// Forward pass without dropout.
    pub fn forward(&self, graph: &Graph, mode: Mode, hook: Option<&mut dyn EmbeddingHook>) -> Result<Forward> {
        let mode = if mode == Mode::Train { Mode::Plain } else { mode };
        let mut tape = Tape::new();
        let r = self.record(&mut tape, graph, mode, hook, None)?;
        Ok(Forward {
            logits: tape.value(r.logits).clone(),
            layer_outputs: r.layer_outputs.iter().map(|&v| tape.value(v).clone()).collect(),
            agg_inputs: r.agg_inputs.iter().map(|&v| tape.value(v).clone()).collect(),
            trims: r.trims,
            agg_time: r.agg_time,
        })
    }

    pub fn logits(&self, graph: &Graph, mode: Mode) -> Result<DenseMatrix> {
        Ok(self.forward(graph, mode, None)?.logits)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// `<path>` holds the tensors as consecutive little-endian f32 values;
// `<path>.manifest` is text:
//
//   robagg-checkpoint 1
//   key=value            (arch, in_dim, widths, aggregator, dropout, task, ...)
//   tensor <key> <rows> <cols> <byte offset>

const MAGIC: &str = "robagg-checkpoint 1";

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn concat_rows(rows: &[Vec<f32>]) -> DenseMatrix {
    DenseMatrix::row_vector(rows.concat())
}

impl Model {
    fn tensors(&self) -> Vec<(String, DenseMatrix)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match self.config.arch {
                Arch::Gcn => out.push((format!("layer{i}.weight"), layer.weights[0].clone())),
                Arch::Gin => {
                    for (j, w) in layer.weights.iter().enumerate() {
                        out.push((format!("layer{i}.mlp{j}.weight"), w.clone()));
                    }
                }
            }
            out.push((format!("layer{i}.m_g"), layer.center.clone()));
        }
        if let Some(s) = &self.stats {
            let mu: Vec<Vec<f32>> = s.layers.iter().map(|d| d.mean.clone()).collect();
            let sd: Vec<Vec<f32>> = s.layers.iter().map(|d| d.std.clone()).collect();
            out.push(("stats.mu".into(), concat_rows(&mu)));
            out.push(("stats.sigma".into(), concat_rows(&sd)));
        }
        if let Some(c) = &self.clip {
            out.push(("clip.lo".into(), concat_rows(&c.lo)));
            out.push(("clip.hi".into(), concat_rows(&c.hi)));
        }
        out.push(("combine.s".into(), self.combine.clone()));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut manifest = String::new();
        manifest.push_str(MAGIC);
        manifest.push('\n');
        let c = &self.config;
        manifest.push_str(&format!("arch={}\n", c.arch));
        manifest.push_str(&format!("in_dim={}\n", c.in_dim));
        manifest.push_str(&format!("widths={}\n", join(&c.widths)));
        manifest.push_str(&format!("aggregator={}\n", c.aggregator));
        manifest.push_str(&format!("dropout={}\n", c.dropout));
        manifest.push_str(&format!("task={}\n", c.task.as_str()));
        manifest.push_str(&format!("center_trained={}\n", u8::from(self.center_trained)));
        if let Some(s) = &self.stats {
            let counts: Vec<usize> = s.layers.iter().map(|d| d.count).collect();
            manifest.push_str(&format!("stats.count={}\n", join(&counts)));
        }
        let mut blob = Vec::new();
        for (key, m) in self.tensors() {
            manifest.push_str(&format!("tensor {key} {} {} {}\n", m.rows(), m.cols(), blob.len()));
            for x in m.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::File::create(path)?.write_all(&blob)?;
        fs::write(manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(manifest_path(path))?;
        let blob = fs::read(path)?;
        let bad = |line: usize, msg: String| Error::Parse { line, msg };

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad(1, "missing checkpoint header".into())),
        }
        let mut meta = std::collections::HashMap::new();
        let mut tensors = std::collections::HashMap::new();
        for (i, line) in lines {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(bad(ln, format!("malformed tensor line '{line}'")));
                }
                let num = |s: &str| s.parse::<usize>().map_err(|e| bad(ln, format!("'{s}': {e}")));
                let (rows, cols, off) = (num(parts[1])?, num(parts[2])?, num(parts[3])?);
                let end = off + rows * cols * 4;
                if end > blob.len() {
                    return Err(bad(ln, format!("tensor {} runs past end of data", parts[0])));
                }
                let data = blob[off..end]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                tensors.insert(parts[0].to_string(), DenseMatrix::new(rows, cols, data)?);
            } else if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), (ln, v.to_string()));
            } else {
                return Err(bad(ln, format!("unrecognized line '{line}'")));
            }
        }
        let get = |k: &str| -> Result<&(usize, String)> {
            meta.get(k).ok_or_else(|| bad(0, format!("missing '{k}'")))
        };
        let parse_list = |k: &str| -> Result<Vec<usize>> {
            let (ln, v) = get(k)?;
            v.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| bad(*ln, format!("{k}: {e}"))))
                .collect()
        };
        let arch: Arch = get("arch")?.1.parse()?;
        let (ln, in_dim) = get("in_dim")?;
        let in_dim = in_dim.parse().map_err(|e| bad(*ln, format!("in_dim: {e}")))?;
        let widths = parse_list("widths")?;
        let aggregator: Aggregator = get("aggregator")?.1.parse()?;
        let (ln, dropout) = get("dropout")?;
        let dropout = dropout.parse().map_err(|e| bad(*ln, format!("dropout: {e}")))?;
        let task = match get("task")?.1.as_str() {
            "node" => Task::Node,
            "graph" => Task::Graph,
            other => return Err(bad(get("task")?.0, format!("unknown task '{other}'"))),
        };
        let config = ModelConfig {
            arch,
            in_dim,
            widths,
            aggregator,
            dropout,
            task,
        };
        let mut model = Model::new(config, 0)?;
        model.center_trained = get("center_trained").map(|(_, v)| v == "1").unwrap_or(false);

        let has_stats = tensors.contains_key("stats.mu");
        let has_clip = tensors.contains_key("clip.lo");
        let mut take = |key: &str, rows: usize, cols: usize| -> Result<DenseMatrix> {
            let m = tensors
                .remove(key)
                .ok_or_else(|| bad(0, format!("missing tensor '{key}'")))?;
            if m.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "tensor {key} is {:?}, expected {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            Ok(m)
        };
        let nl = model.num_layers();
        for i in 0..nl {
            let layer = &mut model.layers[i];
            match arch {
                Arch::Gcn => {
                    let (r, c) = layer.weights[0].shape();
                    layer.weights[0] = take(&format!("layer{i}.weight"), r, c)?;
                }
                Arch::Gin => {
                    for j in 0..layer.weights.len() {
                        let (r, c) = layer.weights[j].shape();
                        layer.weights[j] = take(&format!("layer{i}.mlp{j}.weight"), r, c)?;
                    }
                }
            }
            let d = layer.center.cols();
            layer.center = take(&format!("layer{i}.m_g"), 1, d)?;
        }
        model.combine = take("combine.s", 1, 3)?;

        let agg_widths: Vec<usize> = (0..nl).map(|l| model.config.agg_width(l)).collect();
        let total: usize = agg_widths.iter().sum();
        let split = |m: DenseMatrix| -> Vec<Vec<f32>> {
            let mut out = Vec::new();
            let mut at = 0;
            for &w in &agg_widths {
                out.push(m.data()[at..at + w].to_vec());
                at += w;
            }
            out
        };
        if has_stats {
            let mu = split(take("stats.mu", 1, total)?);
            let sd = split(take("stats.sigma", 1, total)?);
            let counts = parse_list("stats.count")?;
            if counts.len() != nl {
                return Err(bad(get("stats.count")?.0, "stats.count length".into()));
            }
            let layers = mu
                .into_iter()
                .zip(sd)
                .zip(counts)
                .map(|((mean, std), count)| DimStats { mean, std, count })
                .collect();
            model.stats = Some(StatsTable { layers });
        }
        if has_clip {
            let lo = split(take("clip.lo", 1, total)?);
            let hi = split(take("clip.hi", 1, total)?);
            model.clip = Some(ClipTable { lo, hi });
        }
        Ok(model)
    }
}
