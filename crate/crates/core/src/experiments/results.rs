//! Results records and their JSON/CSV serialization.
//!
//! Every float is written as `{:.16e}` (17 significant digits), so equal
//! runs produce byte-equal files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::sve::DiversityTable;

/// One evaluation of one trained model on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub method: String,
    /// Condition within the experiment, e.g. `M=4` or `gaussian_noise/3`; empty for none.
    pub label: String,
    pub metrics: MetricsReport,
    /// Mean total-variation distance between member predictions.
    pub disagreement: f64,
    pub trainable_params: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diversity: Vec<DiversityTable>,
    /// Relative L2 distances between member spectra, one per `(layer, a, b)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma_distances: Vec<SigmaDistance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaDistance {
    pub layer: String,
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub label: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (N − 1 denominator); 0 for a single seed.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub algorithm_id: String,
    pub code_version: String,
    pub runs: Vec<RunEntry>,
    pub aggregates: Vec<Aggregate>,
}

/// Scalar metrics aggregated across seeds, in column order.
pub fn scalar_metrics(e: &RunEntry) -> Vec<(&'static str, f64)> {
    let m = &e.metrics;
    let mut v = vec![
        ("accuracy", m.accuracy),
        ("ece", m.ece),
        ("nll", m.nll),
        ("brier", m.brier),
        ("disagreement", e.disagreement),
    ];
    if let Some(o) = &m.ood {
        v.extend([("auroc", o.auroc), ("auprc", o.auprc), ("fpr_at_95_tpr", o.fpr_at_95_tpr)]);
    }
    v
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups runs by `(method, label)` in first-appearance order.
pub fn aggregate(runs: &[RunEntry]) -> Vec<Aggregate> {
    let mut groups: Vec<(&str, &str)> = Vec::new();
    for r in runs {
        if !groups.contains(&(r.method.as_str(), r.label.as_str())) {
            groups.push((&r.method, &r.label));
        }
    }
    let mut out = Vec::new();
    for (method, label) in groups {
        let members: Vec<&RunEntry> = runs.iter().filter(|r| r.method == method && r.label == label).collect();
        for (metric, _) in scalar_metrics(members[0]) {
            let xs: Vec<f64> = members
                .iter()
                .filter_map(|r| scalar_metrics(r).into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v))
                .collect();
            let (mean, std) = mean_std(&xs);
            out.push(Aggregate {
                method: method.to_string(),
                label: label.to_string(),
                metric: metric.to_string(),
                n: xs.len(),
                mean,
                std,
            });
        }
    }
    out
}

impl ResultsRecord {
    pub fn aggregate_of(&self, method: &str, label: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.label == label && a.metric == metric)
    }

    pub fn mean_of(&self, method: &str, label: &str, metric: &str) -> Option<f64> {
        self.aggregate_of(method, label, metric).map(|a| a.mean)
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// serde_json formatter writing floats with 17 significant digits.
struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json_bytes(value)?).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("csv write to {}: {other:?}", path.display())),
    }
}

/// Writes `rows` under `header` to `path`.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const METRIC_COLUMNS: [&str; 8] = ["accuracy", "ece", "nll", "brier", "disagreement", "auroc", "auprc", "fpr_at_95_tpr"];

/// One row per run: seed, method, label, trainable params, then metrics.
pub fn per_seed_rows(record: &ResultsRecord) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["seed", "method", "label", "trainable_params"].map(String::from).to_vec();
    header.extend(METRIC_COLUMNS.map(String::from));
    let rows = record
        .runs
        .iter()
        .map(|r| {
            let vals = scalar_metrics(r);
            let mut row = vec![r.seed.to_string(), r.method.clone(), r.label.clone(), r.trainable_params.to_string()];
            row.extend(
                METRIC_COLUMNS
                    .iter()
                    .map(|c| vals.iter().find(|(k, _)| k == c).map(|(_, v)| fmt_f64(*v)).unwrap_or_default()),
            );
            row
        })
        .collect();
    (header, rows)
}

/// One row per `(method, label)` group with mean and std of every metric.
pub fn plot_rows(record: &ResultsRecord) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["method", "label", "n"].map(String::from).to_vec();
    for c in METRIC_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut seen: Vec<(&str, &str)> = Vec::new();
    for a in &record.aggregates {
        let key = (a.method.as_str(), a.label.as_str());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let mut row = vec![a.method.clone(), a.label.clone(), a.n.to_string()];
        for c in METRIC_COLUMNS {
            match record.aggregate_of(&a.method, &a.label, c) {
                Some(g) => row.extend([fmt_f64(g.mean), fmt_f64(g.std)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        rows.push(row);
    }
    (header, rows)
}

/// Writes `results.json`, `per_seed.csv` and `plot_data.csv` into `dir`.
pub fn write_record(record: &ResultsRecord, dir: &Path) -> Result<()> {
    write_json(record, &dir.join("results.json"))?;
    let (h, r) = per_seed_rows(record);
    write_csv(&dir.join("per_seed.csv"), &h, &r)?;
    let (h, r) = plot_rows(record);
    write_csv(&dir.join("plot_data.csv"), &h, &r)
}
