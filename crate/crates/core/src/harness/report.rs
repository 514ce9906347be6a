//! Summaries and plot data from sweep records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sweep::{records_header, RunRecord, TimingRecord};

pub const SUMMARY_FILE: &str = "summary.json";
pub const ACC_VS_BER_FILE: &str = "acc_vs_ber.csv";
pub const PARETO_FILE: &str = "pareto.csv";

/// Normal-approximation 95% interval half-width factor.
const Z95: f64 = 1.959_963_984_540_054;

/// Mean and 95% confidence interval of `xs` (zero width for n < 2).
pub fn mean_ci(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, mean, mean);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let half = Z95 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub arch: String,
    pub dataset: String,
    pub aggregator: String,
    pub site: String,
    pub ber: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub mean_trimmed_fraction: f64,
    pub mean_affected_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub aggregator: String,
    pub site: String,
    pub normalized_latency: f64,
    pub mean_accuracy: f64,
    pub on_frontier: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub pareto: Vec<ParetoPoint>,
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("{}{}", records_header(), String::from_utf8(bytes).expect("UTF-8")))
}

/// Groups by (arch, dataset, aggregator, site, BER) in first-seen order.
pub fn summarize(records: &[RunRecord], timings: Option<&[TimingRecord]>) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Contract("report over zero records".into()));
    }
    let mut order: Vec<(String, String, String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.arch.clone(), r.dataset.clone(), r.aggregator.clone(), r.site.clone(), r.ber.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let groups: Vec<GroupSummary> = order
        .iter()
        .map(|key| {
            let rs = &groups[key];
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let (mean, lo, hi) = mean_ci(&acc);
            let avg = |f: fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            GroupSummary {
                arch: key.0.clone(),
                dataset: key.1.clone(),
                aggregator: key.2.clone(),
                site: key.3.clone(),
                ber: f64::from_bits(key.4),
                runs: rs.len(),
                mean_accuracy: mean,
                ci95_low: lo,
                ci95_high: hi,
                mean_trimmed_fraction: avg(|r| r.trimmed_fraction),
                mean_affected_fraction: avg(|r| r.affected_fraction),
            }
        })
        .collect();
    Ok(Summary {
        pareto: pareto(records, timings),
        groups,
    })
}

/// Per site: mean accuracy over faulty cells (BER > 0) against mean
/// aggregation latency normalized to the `mean` aggregator.
fn pareto(records: &[RunRecord], timings: Option<&[TimingRecord]>) -> Vec<ParetoPoint> {
    let Some(timings) = timings else {
        return Vec::new();
    };
    let mut lat: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for t in timings {
        let e = lat.entry((t.aggregator.clone(), t.site.clone())).or_default();
        e.0 += t.agg_latency_us;
        e.1 += 1;
    }
    let mut acc: Vec<((String, String), (f64, usize))> = Vec::new();
    for r in records.iter().filter(|r| r.ber > 0.0) {
        let key = (r.aggregator.clone(), r.site.clone());
        match acc.iter_mut().find(|(k, _)| *k == key) {
            Some((_, e)) => {
                e.0 += r.accuracy;
                e.1 += 1;
            }
            None => acc.push((key, (r.accuracy, 1))),
        }
    }
    let mut points: Vec<ParetoPoint> = acc
        .into_iter()
        .filter_map(|((agg, site), (sum, n))| {
            let (l, c) = lat.get(&(agg.clone(), site.clone()))?;
            let (bl, bc) = lat.get(&("mean".to_string(), site.clone()))?;
            Some(ParetoPoint {
                normalized_latency: (l / *c as f64) / (bl / *bc as f64),
                mean_accuracy: sum / n as f64,
                aggregator: agg,
                site,
                on_frontier: false,
            })
        })
        .collect();
    for i in 0..points.len() {
        let p = &points[i];
        let dominated = points.iter().any(|q| {
            q.site == p.site
                && q.normalized_latency <= p.normalized_latency
                && q.mean_accuracy >= p.mean_accuracy
                && (q.normalized_latency < p.normalized_latency || q.mean_accuracy > p.mean_accuracy)
        });
        points[i].on_frontier = !dominated;
    }
    points
}

/// Writes the JSON summary and plot-data files into `out_dir`.
pub fn write_report(records: &[RunRecord], timings: Option<&[TimingRecord]>, out_dir: impl AsRef<Path>) -> Result<Summary> {
    let summary = summarize(records, timings)?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["aggregator", "site", "ber", "mean_accuracy", "ci95_low", "ci95_high", "runs"])?;
    for g in &summary.groups {
        w.write_record([
            g.aggregator.clone(),
            g.site.clone(),
            g.ber.to_string(),
            g.mean_accuracy.to_string(),
            g.ci95_low.to_string(),
            g.ci95_high.to_string(),
            g.runs.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join(ACC_VS_BER_FILE), w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &summary.pareto {
        w.serialize(p)?;
    }
    w.flush()?;
    let mut bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if summary.pareto.is_empty() {
        bytes = b"aggregator,site,normalized_latency,mean_accuracy,on_frontier\n".to_vec();
    }
    fs::write(dir.join(PARETO_FILE), bytes)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(agg: &str, ber: f64, acc: f64) -> RunRecord {
        RunRecord {
            arch: "gcn".into(),
            dataset: "d".into(),
            aggregator: agg.into(),
            site: "weights".into(),
            ber,
            seed: 0,
            repeat: 0,
            accuracy: acc,
            trimmed_fraction: 0.0,
            affected_fraction: 0.0,
            bits_flipped: 0,
        }
    }

    #[test]
    fn constant_values_have_zero_width_ci() {
        assert_eq!(mean_ci(&[0.5, 0.5, 0.5]), (0.5, 0.5, 0.5));
        let (m, lo, hi) = mean_ci(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!(lo < m && hi > m);
    }

    #[test]
    fn single_record_csv() {
        let csv = records_to_csv(&[rec("mean", 1e-5, 0.75)]).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("gcn,d,mean,weights,"));
    }

    #[test]
    fn empty_is_contract_error() {
        assert!(matches!(summarize(&[], None), Err(Error::Contract(_))));
    }

    #[test]
    fn pareto_marks_dominated() {
        let records = vec![rec("mean", 1e-5, 0.6), rec("median", 1e-5, 0.9), rec("max", 1e-5, 0.5)];
        let t = |a: &str, us: f64| TimingRecord {
            cell: 0,
            aggregator: a.into(),
            site: "weights".into(),
            ber: 1e-5,
            agg_latency_us: us,
        };
        let timings = vec![t("mean", 10.0), t("median", 50.0), t("max", 20.0)];
        let s = summarize(&records, Some(&timings)).unwrap();
        let get = |a: &str| s.pareto.iter().find(|p| p.aggregator == a).unwrap();
        assert!(get("mean").on_frontier);
        assert!(get("median").on_frontier);
        assert!(!get("max").on_frontier);
        assert_eq!(get("median").normalized_latency, 5.0);
    }
}
