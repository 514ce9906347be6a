//! Clean full-batch training, calibration and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Mode, StatsAccumulator};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Graph, Masks, Task};
use crate::model::{Model, ParamKind};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => f.write_str("sgd"),
            Optimizer::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam()),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    /// L2 penalty on layer weights only.
    pub weight_decay: f32,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            optimizer: Optimizer::adam(),
            seed: 0,
            patience: Some(50),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        // lr = 0 is allowed: it freezes the model, which is useful as a control.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be finite and >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f32,
    /// Accuracy of the training-mode (dropout) logits on the train mask.
    pub train_acc: f64,
    /// Clean accuracy on the validation mask after the update; NaN without one.
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation checkpoint, calibrated.
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    /// 1-based epoch the checkpoint was taken after.
    pub best_epoch: usize,
}

/// `(row of logits, class)` pairs for the items selected by `mask`.
fn targets(graph: &Graph, mask: &[bool]) -> Vec<(usize, usize)> {
    Masks::indices(mask).into_iter().map(|i| (i, graph.labels()[i])).collect()
}

/// Fraction of masked items whose argmax (lowest index on ties) matches the
/// label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if logits.rows() != labels.len() || mask.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} labels, {} mask entries",
            logits.rows(),
            labels.len(),
            mask.len()
        )));
    }
    let idx = Masks::indices(mask);
    if idx.is_empty() {
        return Err(Error::Contract("accuracy over an empty mask".into()));
    }
    let correct = idx.iter().filter(|&&i| logits.argmax_row(i) == Some(labels[i])).count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Accuracy with every aggregator fully active.
pub fn evaluate(model: &Model, graph: &Graph, mask: &[bool]) -> Result<f64> {
    evaluate_mode(model, graph, mask, Mode::Infer)
}

pub fn evaluate_mode(model: &Model, graph: &Graph, mask: &[bool], mode: Mode) -> Result<f64> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract("evaluation over an empty mask".into()));
    }
    let logits = model.logits(graph, mode)?;
    accuracy(&logits, graph.labels(), mask)
}

/// Nodes whose aggregation inputs feed calibration: all nodes for node
/// tasks, nodes of training graphs for graph tasks.
fn calibration_rows(graph: &Graph) -> Result<Option<Vec<usize>>> {
    let train = &graph.masks().train;
    if !train.iter().any(|&m| m) {
        return Err(Error::Config("calibration needs a non-empty training set".into()));
    }
    match graph.task() {
        Task::Node => Ok(None),
        Task::Graph => {
            let gi = graph
                .graph_index()
                .ok_or_else(|| Error::Contract("graph task without graph index".into()))?;
            Ok(Some(
                (0..graph.num_nodes()).filter(|&v| train[gi.node_graph[v]]).collect(),
            ))
        }
    }
}

/// Records per-(layer, dim) statistics and clip ranges from one clean,
/// untrimmed pass and installs them in `model`.
pub fn calibrate(model: &mut Model, graph: &Graph) -> Result<()> {
    let rows = calibration_rows(graph)?;
    let f = model.forward(graph, Mode::Plain, None)?;
    let mut acc = StatsAccumulator::new();
    for (l, y) in f.agg_inputs.iter().enumerate() {
        acc.observe(l, y, rows.as_deref())?;
    }
    let (stats, clip) = acc.finish()?;
    model.set_calibration(stats, clip)
}

struct Best {
    acc: f64,
    loss: f64,
    epoch: usize,
    model: Model,
}

/// Clean accuracy and cross-entropy on the validation mask.
fn validation(model: &Model, graph: &Graph, val_t: &[(usize, usize)]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, graph, Mode::Plain, None, None)?;
    let loss = tape.cross_entropy(rec.logits, val_t.to_vec())?;
    let acc = accuracy(tape.value(rec.logits), graph.labels(), &graph.masks().val)?;
    Ok((acc, tape.value(loss).get(0, 0) as f64))
}

struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

/// Trains a copy of `model`, returning the best-validation checkpoint
/// (accuracy, then loss, then earliest epoch), calibrated.
pub fn train(model: &Model, graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_t = targets(graph, &graph.masks().train);
    if train_t.is_empty() {
        return Err(Error::Config("empty training mask".into()));
    }
    let has_val = graph.masks().val.iter().any(|&m| m);
    let mut model = model.clone();
    model.center_trained = model.aggregator().uses_center();
    let kinds = model.param_kinds();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState {
        m: kinds.iter().map(|&k| { let p = model.param(k); DenseMatrix::zeros(p.rows(), p.cols()) }).collect(),
        v: kinds.iter().map(|&k| { let p = model.param(k); DenseMatrix::zeros(p.rows(), p.cols()) }).collect(),
    };

    let mut curve = Vec::with_capacity(cfg.epochs);
    let val_t = targets(graph, &graph.masks().val);
    let mut best: Option<Best> = None;
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let rec = model.record(&mut tape, graph, Mode::Train, None, Some(&mut rng))?;
        let loss = tape.cross_entropy(rec.logits, train_t.clone())?;
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("loss is {loss_value}"),
            });
        }
        let train_acc = accuracy(tape.value(rec.logits), graph.labels(), &graph.masks().train)?;
        let grads = tape.backward(loss)?;

        for (pi, &kind) in kinds.iter().enumerate() {
            let mut g = grads.get(rec.params[pi]);
            let decay = matches!(kind, ParamKind::Weight { .. }) && cfg.weight_decay > 0.0;
            {
                let p = model.param(kind);
                for (i, gi) in g.data_mut().iter_mut().enumerate() {
                    if decay {
                        *gi += cfg.weight_decay * p.data()[i];
                    }
                    if model.is_masked(kind, i) {
                        *gi = 0.0;
                    }
                }
            }
            let lr = cfg.lr;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (w, gi) in model.param_mut(kind).data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let t = epoch as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = adam.m[pi].data_mut();
                    let v = adam.v[pi].data_mut();
                    for (i, w) in model.param_mut(kind).data_mut().iter_mut().enumerate() {
                        let gi = g.data()[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        model.apply_masks();

        let (val_acc, val_loss) = if has_val {
            validation(&model, graph, &val_t)?
        } else {
            (f64::NAN, f64::NAN)
        };
        curve.push(EpochRecord {
            epoch,
            loss: loss_value,
            train_acc,
            val_acc,
            val_loss,
        });
        // higher accuracy wins, then lower loss, then the earlier epoch
        let improved = match &best {
            None => true,
            Some(b) => !has_val || val_acc > b.acc || (val_acc == b.acc && val_loss < b.loss),
        };
        if improved {
            best = Some(Best {
                acc: val_acc,
                loss: val_loss,
                epoch,
                model: model.clone(),
            });
        }
        if let (Some(p), Some(b)) = (cfg.patience, &best) {
            if has_val && epoch - b.epoch >= p {
                break;
            }
        }
    }
    let Best {
        epoch: best_epoch,
        mut model,
        ..
    } = best.expect("at least one epoch");
    calibrate(&mut model, graph)?;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Aggregator;
    use crate::model::{Arch, ModelConfig};
    use crate::synth::PlantedPartition;

    fn bench() -> Graph {
        PlantedPartition {
            nodes: 60,
            communities: 2,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 8,
            noise: 0.0,
            seed: 4,
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn accuracy_ties_and_empty_mask() {
        let logits = DenseMatrix::filled(4, 2, 0.5);
        let acc = accuracy(&logits, &[0, 1, 0, 0], &[true; 4]).unwrap();
        assert_eq!(acc, 0.75);
        assert!(matches!(accuracy(&logits, &[0; 4], &[false; 4]), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let g = bench();
        let m = Model::new(ModelConfig::for_graph(Arch::Gcn, &g, Aggregator::Mean).with_widths(vec![8, 2]), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&m, &g, &cfg).unwrap();
        assert_eq!(out.model.layers.iter().map(|l| &l.weights).collect::<Vec<_>>(),
                   m.layers.iter().map(|l| &l.weights).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let g = bench();
        let m = Model::new(ModelConfig::for_graph(Arch::Gin, &g, Aggregator::Sum).with_widths(vec![8, 2]), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&m, &g, &cfg).unwrap();
        let b = train(&m, &g, &cfg).unwrap();
        for (x, y) in a.model.weight_matrices().zip(b.model.weight_matrices()) {
            assert!(x.bitwise_eq(y));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!("rmsprop".parse::<Optimizer>().is_err());
    }
}
