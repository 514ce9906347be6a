//! BER sweeps over (aggregator, site, BER, seed, repeat) grids.
//!
//! Cells run in a fixed canonical order (aggregator, site, BER, seed,
//! repeat); chunks execute on the rayon pool and are appended to
//! `records.csv` in order, so an interrupted sweep resumes from the rows
//! already on disk. Every aggregator sees the same faults for a given
//! (seed, repeat, site, BER): the injection seed ignores the aggregator.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Aggregator, Mode};
use crate::error::{Error, Result};
use crate::fault::{check_ber, inject_adjacency, EmbeddingInjector, Site};
use crate::graph::Graph;
use crate::model::Model;
use crate::train::accuracy;

use super::metrics::{affected_fraction, trimmed_fraction, DEFAULT_AFFECTED_THRESHOLD};

pub const RECORDS_FILE: &str = "records.csv";
pub const TIMINGS_FILE: &str = "timings.csv";

/// 11 log-spaced points from 1e-8 to 1e-3.
pub fn default_ber_grid() -> Vec<f64> {
    (0..11).map(|i| 10f64.powf(-8.0 + 0.5 * i as f64)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub aggregators: Vec<Aggregator>,
    pub sites: Vec<Site>,
    pub bers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub repeats: usize,
    pub affected_threshold: f64,
    /// Dataset label written into every record.
    pub dataset: String,
    /// Cells per parallel chunk between flushes.
    pub chunk: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            aggregators: vec![Aggregator::Mean],
            sites: Site::ALL.to_vec(),
            bers: default_ber_grid(),
            seeds: (0..5).collect(),
            repeats: 10,
            affected_threshold: DEFAULT_AFFECTED_THRESHOLD,
            dataset: "dataset".into(),
            chunk: 64,
        }
    }
}

impl SweepSpec {
    /// Parses aggregator and site names, failing on the first unknown one.
    pub fn with_names(mut self, aggregators: &[&str], sites: &[&str]) -> Result<Self> {
        self.aggregators = aggregators.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        self.sites = sites.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.aggregators.is_empty() || self.sites.is_empty() || self.bers.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        for a in &self.aggregators {
            a.validate()?;
        }
        for &b in &self.bers {
            check_ber(b).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.affected_threshold >= 0.0) {
            return Err(Error::Config("affected threshold must be >= 0".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.aggregators.len() * self.sites.len() * self.bers.len() * self.seeds.len() * self.repeats
    }

    /// Coordinates of cell `i` in canonical order.
    pub fn cell(&self, i: usize) -> Cell {
        let mut r = i;
        let repeat = r % self.repeats;
        r /= self.repeats;
        let seed_idx = r % self.seeds.len();
        r /= self.seeds.len();
        let ber_idx = r % self.bers.len();
        r /= self.bers.len();
        let site_idx = r % self.sites.len();
        r /= self.sites.len();
        Cell {
            agg_idx: r,
            site: self.sites[site_idx],
            ber_idx,
            ber: self.bers[ber_idx],
            seed: self.seeds[seed_idx],
            repeat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub agg_idx: usize,
    pub site: Site,
    pub ber_idx: usize,
    pub ber: f64,
    pub seed: u64,
    pub repeat: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Injection seed shared by every aggregator for one fault scenario.
pub fn fault_seed(seed: u64, repeat: usize, site: Site, ber_idx: usize) -> u64 {
    let site_tag = Site::ALL.iter().position(|&s| s == site).unwrap_or(0) as u64;
    [repeat as u64, site_tag, ber_idx as u64]
        .into_iter()
        .fold(splitmix(seed), |h, x| splitmix(h ^ x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: String,
    pub dataset: String,
    pub aggregator: String,
    pub site: String,
    pub ber: f64,
    pub seed: u64,
    pub repeat: usize,
    pub accuracy: f64,
    pub trimmed_fraction: f64,
    pub affected_fraction: f64,
    pub bits_flipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub cell: usize,
    pub aggregator: String,
    pub site: String,
    pub ber: f64,
    /// Wall-clock aggregation time of the faulty forward pass.
    pub agg_latency_us: f64,
}

struct Prepared<'a> {
    model: &'a Model,
    clean_final: crate::tensor::DenseMatrix,
}

/// Runs one cell.
pub fn run_cell(
    spec: &SweepSpec,
    model: &Model,
    graph: &Graph,
    clean_final: &crate::tensor::DenseMatrix,
    cell: &Cell,
) -> Result<(RunRecord, f64)> {
    let fseed = fault_seed(cell.seed, cell.repeat, cell.site, cell.ber_idx);
    let mask = &graph.masks().test;
    let (fwd, flipped, eval_graph) = match cell.site {
        Site::Weights => {
            let mut m = model.clone();
            let rep = m.inject_weights(cell.ber, &mut ChaCha8Rng::seed_from_u64(fseed));
            (m.forward(graph, Mode::Infer, None)?, rep.bits_flipped, None)
        }
        Site::Embeddings => {
            let mut hook = EmbeddingInjector::new(cell.ber, fseed)?;
            let f = model.forward(graph, Mode::Infer, Some(&mut hook))?;
            (f, hook.total().bits_flipped, None)
        }
        Site::Adjacency => {
            let (g, rep) = inject_adjacency(graph, cell.ber, &mut ChaCha8Rng::seed_from_u64(fseed))?;
            (model.forward(&g, Mode::Infer, None)?, rep.bits_flipped, Some(g))
        }
    };
    let labels = eval_graph.as_ref().unwrap_or(graph).labels();
    let acc = accuracy(&fwd.logits, labels, mask)?;
    let last = fwd.layer_outputs.last().expect("at least one layer");
    let rec = RunRecord {
        arch: model.config().arch.to_string(),
        dataset: spec.dataset.clone(),
        aggregator: model.aggregator().to_string(),
        site: cell.site.to_string(),
        ber: cell.ber,
        seed: cell.seed,
        repeat: cell.repeat,
        accuracy: acc,
        trimmed_fraction: trimmed_fraction(&fwd.trims),
        affected_fraction: affected_fraction(clean_final, last, spec.affected_threshold)?,
        bits_flipped: flipped,
    };
    Ok((rec, fwd.agg_time.as_secs_f64() * 1e6))
}

fn csv_row(rec: &RunRecord) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(rec)?;
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn records_header() -> &'static str {
    "arch,dataset,aggregator,site,ber,seed,repeat,accuracy,trimmed_fraction,affected_fraction,bits_flipped\n"
}

const TIMINGS_HEADER: &str = "cell,aggregator,site,ber,agg_latency_us\n";

/// Reads the complete rows of an existing records file, dropping a torn
/// last line, and checks they match the canonical cell prefix.
fn resume_prefix(path: &Path, spec: &SweepSpec, models: &[Model]) -> Result<usize> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    if text.is_empty() {
        return Ok(0);
    }
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if !complete.starts_with(records_header()) {
        return Err(Error::Config(format!("{} has an unexpected header", path.display())));
    }
    let mut rdr = csv::Reader::from_reader(complete.as_bytes());
    let mut n = 0;
    for row in rdr.deserialize::<RunRecord>() {
        let row = row?;
        if n >= spec.num_cells() {
            return Err(Error::Config("existing records exceed the sweep grid".into()));
        }
        let c = spec.cell(n);
        let agg = models[c.agg_idx].aggregator().to_string();
        if row.aggregator != agg
            || row.site != c.site.to_string()
            || row.ber != c.ber
            || row.seed != c.seed
            || row.repeat != c.repeat
            || row.dataset != spec.dataset
        {
            return Err(Error::Config(format!(
                "existing record {} does not match this sweep; use a fresh output directory",
                n + 1
            )));
        }
        n += 1;
    }
    // rewrite without any torn tail
    if complete.len() != text.len() {
        fs::write(path, complete)?;
    }
    Ok(n)
}

/// Outcome of [`sweep`].
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub records_path: PathBuf,
    pub timings_path: PathBuf,
    /// Cells found on disk and skipped.
    pub resumed: usize,
}

/// Runs the sweep for `models` (one per entry of `spec.aggregators`, each
/// already configured with that aggregator) and writes results under
/// `out_dir`. `limit` stops after that many total cells, leaving a
/// resumable partial table.
pub fn sweep(
    spec: &SweepSpec,
    models: &[Model],
    graph: &Graph,
    out_dir: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<SweepOutcome> {
    spec.validate()?;
    if models.len() != spec.aggregators.len() {
        return Err(Error::Config(format!(
            "{} models for {} aggregators",
            models.len(),
            spec.aggregators.len()
        )));
    }
    for (m, a) in models.iter().zip(&spec.aggregators) {
        if m.aggregator() != *a {
            return Err(Error::Config(format!("model configured for {} listed as {a}", m.aggregator())));
        }
    }
    if !graph.masks().test.iter().any(|&t| t) {
        return Err(Error::Contract("sweep needs a non-empty test mask".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join(RECORDS_FILE);
    let timings_path = out_dir.join(TIMINGS_FILE);
    let done = resume_prefix(&records_path, spec, models)?;

    let prepared: Vec<Prepared> = models
        .iter()
        .map(|m| {
            let f = m.forward(graph, Mode::Infer, None)?;
            Ok(Prepared {
                model: m,
                clean_final: f.layer_outputs.last().expect("layers").clone(),
            })
        })
        .collect::<Result<_>>()?;

    let mut records_file = OpenOptions::new().create(true).append(true).open(&records_path)?;
    if done == 0 {
        records_file.set_len(0)?;
        records_file.write_all(records_header().as_bytes())?;
    }
    let fresh_timings = done == 0 || !timings_path.exists();
    let mut timings_file: File = OpenOptions::new().create(true).append(true).open(&timings_path)?;
    if fresh_timings {
        timings_file.set_len(0)?;
        timings_file.write_all(TIMINGS_HEADER.as_bytes())?;
    }

    let end = limit.map_or(spec.num_cells(), |l| l.min(spec.num_cells()));
    let mut start = done;
    while start < end {
        let stop = (start + spec.chunk.max(1)).min(end);
        let results: Vec<Result<(RunRecord, f64)>> = (start..stop)
            .into_par_iter()
            .map(|i| {
                let c = spec.cell(i);
                let p = &prepared[c.agg_idx];
                run_cell(spec, p.model, graph, &p.clean_final, &c)
            })
            .collect();
        let mut rows = String::new();
        let mut times = String::new();
        for (k, r) in results.into_iter().enumerate() {
            let (rec, us) = r?;
            rows.push_str(&csv_row(&rec)?);
            times.push_str(&format!("{},{},{},{},{}\n", start + k, rec.aggregator, rec.site, rec.ber, us));
        }
        records_file.write_all(rows.as_bytes())?;
        records_file.flush()?;
        timings_file.write_all(times.as_bytes())?;
        timings_file.flush()?;
        start = stop;
    }
    drop(records_file);

    let records = read_records(&records_path)?;
    Ok(SweepOutcome {
        records,
        records_path,
        timings_path,
        resumed: done,
    })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_timings(path: impl AsRef<Path>) -> Result<Vec<TimingRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate().skip(1) {
        let line = line?;
        let p: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("malformed timing row '{line}'"),
        };
        if p.len() != 5 {
            return Err(bad());
        }
        out.push(TimingRecord {
            cell: p[0].parse().map_err(|_| bad())?,
            aggregator: p[1].to_string(),
            site: p[2].to_string(),
            ber: p[3].parse().map_err(|_| bad())?,
            agg_latency_us: p[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Picks the cosine threshold with the best mean validation accuracy under
/// `site` injection at `ber`, over `trials` fault draws seeded from `seed`.
/// Ties go to the earlier candidate.
pub fn tune_cosine_alpha(
    model: &Model,
    graph: &Graph,
    candidates: &[f32],
    site: Site,
    ber: f64,
    trials: usize,
    seed: u64,
) -> Result<f32> {
    if candidates.is_empty() || trials == 0 {
        return Err(Error::Config("alpha tuning needs candidates and trials".into()));
    }
    if !graph.masks().val.iter().any(|&v| v) {
        return Err(Error::Config("alpha tuning needs a validation mask".into()));
    }
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &alpha in candidates {
        let m = model.with_aggregator(Aggregator::Cosine { alpha })?;
        let mut total = 0.0;
        for t in 0..trials {
            let fseed = fault_seed(seed, t, site, 0);
            let logits = match site {
                Site::Weights => {
                    let mut mm = m.clone();
                    mm.inject_weights(ber, &mut ChaCha8Rng::seed_from_u64(fseed));
                    mm.logits(graph, Mode::Infer)?
                }
                Site::Embeddings => {
                    let mut hook = EmbeddingInjector::new(ber, fseed)?;
                    m.forward(graph, Mode::Infer, Some(&mut hook))?.logits
                }
                Site::Adjacency => {
                    let (g, _) = inject_adjacency(graph, ber, &mut ChaCha8Rng::seed_from_u64(fseed))?;
                    m.logits(&g, Mode::Infer)?
                }
            };
            total += accuracy(&logits, graph.labels(), &graph.masks().val)?;
        }
        let mean = total / trials as f64;
        if mean > best.0 {
            best = (mean, alpha);
        }
    }
    Ok(best.1)
}
