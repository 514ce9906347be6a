//! `robagg` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robagg::aggregate::{Aggregator, Mode};
use robagg::dataset::load_graph;
use robagg::fault::{inject_adjacency, EmbeddingInjector, FaultSpec, Site};
use robagg::harness::{
    config_to_args, default_ber_grid, profile, read_timings, sweep, write_report, ProfileSpec, SweepSpec,
};
use robagg::model::{Arch, Model, ModelConfig};
use robagg::synth::PlantedPartition;
use robagg::train::{accuracy, evaluate, train, Optimizer, TrainConfig};
use robagg::{Error, Graph, Result};

// Retains freed pages, so repeated large per-layer buffers do not pay a
// page fault on every touch.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(
    name = "robagg",
    version,
    about = "Bit-flip robustness experiments for GNN aggregation",
    after_help = "Every subcommand accepts --config FILE: a key=value file (one flag per line, \
                  without dashes) applied before the command-line flags, which take precedence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on clean data and save a calibrated checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Run a BER sweep and write records, timings and summaries.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Time aggregation stages on synthetic graphs of growing size.
    #[command(args_override_self = true)]
    Profile(ProfileArgs),
    /// Magnitude-prune a checkpoint and fine-tune it.
    #[command(args_override_self = true)]
    Prune(PruneArgs),
    /// Inject one fault scenario and print accuracy and flip counts.
    #[command(args_override_self = true)]
    Inject(InjectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "gcn")]
    arch: String,
    /// Dataset file or `synth:key=value,...`.
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "mean")]
    agg: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f32,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 50)]
    patience: usize,
    /// Hidden widths, comma-separated (the output width is the class count).
    #[arg(long, default_value = "64")]
    hidden: String,
    #[arg(long, default_value_t = 0.5)]
    dropout: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Comma-separated aggregators, e.g. `mean,distribution:3:3,cosine:0.2`.
    #[arg(long, default_value = "mean")]
    aggs: String,
    #[arg(long, default_value = "weights,embeddings,adjacency")]
    sites: String,
    /// Comma-separated BERs; defaults to 11 log-spaced points 1e-8..1e-3.
    #[arg(long)]
    bers: Option<String>,
    /// Number of seeds (0..n) or a comma-separated list.
    #[arg(long, default_value = "5")]
    seeds: String,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Relative error above which an embedding row counts as affected.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// Stop after this many cells in total (resume later).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Optional checkpoint; its first aggregation width sets the embedding width.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "10000,30000,100000")]
    sizes: String,
    #[arg(long, default_value = "mean,distribution,dynamic,cosine,median")]
    aggs: String,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    sparsity: f64,
    #[arg(long, default_value_t = 20)]
    finetune_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InjectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    site: String,
    #[arg(long)]
    ber: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the checkpoint's aggregator.
    #[arg(long)]
    agg: Option<String>,
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn parse_num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad {what} value '{s}'")))
}

/// Loads a dataset file, or generates `synth:n=..,k=..,p_in=..,p_out=..,f=..,noise=..,seed=..`.
fn load_dataset(spec: &str) -> Result<Graph> {
    let Some(params) = spec.strip_prefix("synth:").or((spec == "synth").then_some("")) else {
        return load_graph(spec);
    };
    let mut pp = PlantedPartition {
        nodes: 200,
        communities: 2,
        p_in: 0.1,
        p_out: 0.01,
        feature_dim: 256,
        noise: 0.3,
        seed: 7,
    };
    for kv in split_list(params) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad synth parameter '{kv}'")))?;
        match k.trim() {
            "n" | "nodes" => pp.nodes = parse_num(k, v)?,
            "k" | "communities" => pp.communities = parse_num(k, v)?,
            "p_in" => pp.p_in = parse_num(k, v)?,
            "p_out" => pp.p_out = parse_num(k, v)?,
            "f" | "feats" => pp.feature_dim = parse_num(k, v)?,
            "noise" => pp.noise = parse_num(k, v)?,
            "seed" => pp.seed = parse_num(k, v)?,
            other => return Err(Error::Config(format!("unknown synth parameter '{other}'"))),
        }
    }
    pp.generate()
}

fn dataset_label(spec: &str) -> String {
    if spec.starts_with("synth") {
        spec.to_string()
    } else {
        Path::new(spec)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string())
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let arch: Arch = a.arch.parse()?;
    let agg: Aggregator = a.agg.parse()?;
    let optimizer: Optimizer = a.optimizer.parse()?;
    let g = load_dataset(&a.dataset)?;
    let mut widths: Vec<usize> = split_list(&a.hidden)
        .into_iter()
        .map(|w| parse_num("hidden", w))
        .collect::<Result<_>>()?;
    widths.push(g.num_classes());
    let cfg = ModelConfig::for_graph(arch, &g, agg)
        .with_widths(widths)
        .with_dropout(a.dropout);
    let model = Model::new(cfg, a.seed)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        optimizer,
        seed: a.seed,
        patience: (a.patience > 0).then_some(a.patience),
    };
    let out = train(&model, &g, &tc)?;
    out.model.save(&a.out)?;
    let last = out.curve.last().expect("at least one epoch");
    println!(
        "epochs_run={} best_epoch={} final_loss={:.6} val_acc={:.4} test_acc={:.4}",
        out.curve.len(),
        out.best_epoch,
        last.loss,
        out.curve[out.best_epoch - 1].val_acc,
        evaluate(&out.model, &g, &g.masks().test)?
    );
    println!("checkpoint={}", a.out.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let aggs = split_list(&a.aggs);
    let sites = split_list(&a.sites);
    let mut spec = SweepSpec::default().with_names(&aggs, &sites)?;
    spec.bers = match &a.bers {
        Some(b) => split_list(b).into_iter().map(|x| parse_num("ber", x)).collect::<Result<_>>()?,
        None => default_ber_grid(),
    };
    spec.seeds = if a.seeds.contains(',') {
        split_list(&a.seeds).into_iter().map(|x| parse_num("seed", x)).collect::<Result<_>>()?
    } else {
        (0..parse_num::<u64>("seeds", &a.seeds)?).collect()
    };
    spec.repeats = a.repeats;
    spec.affected_threshold = a.threshold;
    spec.dataset = dataset_label(&a.dataset);
    spec.validate()?;

    let base = Model::load(&a.ckpt)?;
    let g = load_dataset(&a.dataset)?;
    let models: Vec<Model> = spec
        .aggregators
        .iter()
        .map(|&agg| base.with_aggregator(agg))
        .collect::<Result<_>>()?;
    let out = sweep(&spec, &models, &g, &a.out, a.limit)?;
    let timings = read_timings(&out.timings_path)?;
    let summary = write_report(&out.records, Some(&timings), &a.out)?;
    println!(
        "records={} resumed={} groups={} out={}",
        out.records.len(),
        out.resumed,
        summary.groups.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let aggregators = split_list(&a.aggs)
        .into_iter()
        .map(str::parse)
        .collect::<Result<Vec<Aggregator>>>()?;
    let sizes = split_list(&a.sizes)
        .into_iter()
        .map(|s| parse_num("size", s))
        .collect::<Result<Vec<usize>>>()?;
    let dim = match &a.ckpt {
        Some(p) => Model::load(p)?.config().agg_width(0),
        None => a.dim,
    };
    let spec = ProfileSpec {
        aggregators,
        sizes,
        dim,
        warmup: a.warmup,
        iters: a.iters,
        seed: a.seed,
        ..ProfileSpec::default()
    };
    let table = profile(&spec)?;
    std::fs::write(&a.out, table.to_csv()?)?;
    for f in &table.fits {
        println!("{} slope_us_per_edge={:.6} r2={:.4}", f.aggregator, f.slope, f.r2);
    }
    Ok(())
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let mut model = Model::load(&a.ckpt)?;
    let g = load_dataset(&a.dataset)?;
    let before = evaluate(&model, &g, &g.masks().test)?;
    let report = model.magnitude_prune(a.sparsity)?;
    if a.finetune_epochs > 0 {
        let tc = TrainConfig {
            epochs: a.finetune_epochs,
            lr: a.lr,
            seed: a.seed,
            patience: None,
            ..TrainConfig::default()
        };
        model = train(&model, &g, &tc)?.model;
    }
    let after = evaluate(&model, &g, &g.masks().test)?;
    model.save(&a.out)?;
    println!(
        "sparsity={:.6} pruned={} of {} test_acc_before={:.4} test_acc_after={:.4}",
        report.achieved, report.pruned, report.total, before, after
    );
    Ok(())
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    let site: Site = a.site.parse()?;
    let fault = FaultSpec::new(site, a.ber, a.seed).map_err(|e| Error::Config(e.to_string()))?;
    let mut model = Model::load(&a.ckpt)?;
    if let Some(agg) = &a.agg {
        model.set_aggregator(agg.parse()?)?;
    }
    let g = load_dataset(&a.dataset)?;
    let clean = evaluate(&model, &g, &g.masks().test)?;
    let (acc, report, trims) = match site {
        Site::Weights => {
            let mut m = model.clone();
            let rep = m.inject_weights(fault.ber, &mut fault.rng());
            let f = m.forward(&g, Mode::Infer, None)?;
            (accuracy(&f.logits, g.labels(), &g.masks().test)?, rep, f.trims)
        }
        Site::Embeddings => {
            let mut hook = EmbeddingInjector::from_spec(&fault)?;
            let f = model.forward(&g, Mode::Infer, Some(&mut hook))?;
            (accuracy(&f.logits, g.labels(), &g.masks().test)?, hook.total(), f.trims)
        }
        Site::Adjacency => {
            let (fg, rep) = inject_adjacency(&g, fault.ber, &mut fault.rng())?;
            let f = model.forward(&fg, Mode::Infer, None)?;
            (accuracy(&f.logits, g.labels(), &g.masks().test)?, rep, f.trims)
        }
    };
    println!(
        "aggregator={} site={} ber={} seed={} clean_acc={:.4} acc={:.4} bits_total={} bits_flipped={} words_affected={} trimmed_fraction={:.6}",
        model.aggregator(),
        site,
        fault.ber,
        fault.seed,
        clean,
        acc,
        report.bits_total,
        report.bits_flipped,
        report.words_affected,
        trims.fraction()
    );
    Ok(())
}

/// Inserts `--config` file settings right after the subcommand so that
/// explicit flags (which come later) override them.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = it.next();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
    let extra = config_to_args(&text).map_err(|e| Error::Config(format!("{path}: {e}")))?;
    let at = rest.len().min(2);
    rest.splice(at..at, extra);
    Ok(rest)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Inject(a) => cmd_inject(a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
