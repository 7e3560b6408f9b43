//! CSV reports, aggregation across seeds, metric correlations and traversal
//! image grids.

use std::path::Path;

use super::EpochRecord;
use crate::error::{Error, Result};
use crate::metrics::spearman;
use crate::models::VaeNet;
use crate::symrep::{ActionRepresentation, ProbeReport};
use crate::worlds::Image;

/// Metrics of one trained seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run: String,
    pub method: String,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
}

impl RunRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Mean and population standard deviation of one metric over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub run: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

fn parse(field: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Dataset { offset: line as usize, msg: format!("not a number: {field:?}") })
}

/// One row per epoch: `epoch`, each loss term, then the independence columns
/// (empty when not evaluated).
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for r in history {
        for (n, _) in &r.terms {
            if !names.contains(n) {
                names.push(n);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch"];
    header.extend(&names);
    header.extend(["independence", "estimated_independence"]);
    w.write_record(&header)?;
    for r in history {
        let mut rec = vec![r.epoch.to_string()];
        for n in &names {
            rec.push(r.terms.iter().find(|(t, _)| t == n).map_or(String::new(), |(_, v)| fmt(*v)));
        }
        rec.push(r.independence.map_or(String::new(), fmt));
        rec.push(r.estimated_independence.map_or(String::new(), fmt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `action, alpha_hat, latent_err, rel_err`.
pub fn write_probe_csv(path: &Path, report: &ProbeReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["action", "alpha_hat", "latent_err", "rel_err"])?;
    for f in &report.fits {
        w.write_record([f.action.to_string(), fmt(f.alpha_hat), fmt(f.latent_err), fmt(f.rel_err)])?;
    }
    w.flush()?;
    Ok(())
}

/// Wide table: `run, method, seed`, then one column per metric.
pub fn write_metrics_csv(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        for (n, _) in &r.metrics {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run", "method", "seed"];
    header.extend(&names);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.run.clone(), r.method.clone(), r.seed.to_string()];
        rec.extend(names.iter().map(|n| r.get(n).map_or(String::new(), fmt)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_metrics_csv`]; empty cells are skipped.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunRow>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "run" || &header[1] != "method" || &header[2] != "seed" {
        return Err(Error::Dataset { offset: 0, msg: "metrics table must start with run,method,seed".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let seed = rec[2].trim().parse().map_err(|_| Error::Dataset { offset: line as usize, msg: format!("bad seed {:?}", &rec[2]) })?;
        let mut metrics = Vec::new();
        for (name, field) in header.iter().zip(rec.iter()).skip(3) {
            if !field.trim().is_empty() {
                metrics.push((name.to_string(), parse(field, line)?));
            }
        }
        rows.push(RunRow { run: rec[0].to_string(), method: rec[1].to_string(), seed, metrics });
    }
    Ok(rows)
}

/// Per run and metric: mean and population std over the finite values.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        for (n, _) in &r.metrics {
            let key = (r.run.clone(), r.method.clone(), n.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(run, method, metric)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.run == run && r.method == method)
                .filter_map(|r| r.get(&metric))
                .filter(|v| v.is_finite())
                .collect();
            let n = values.len();
            let (mean, std) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = values.iter().sum::<f64>() / n as f64;
                (mean, (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt())
            };
            AggregateRow { run, method, metric, mean, std, n_runs: n }
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "method", "metric", "mean", "std", "n_runs"])?;
    for r in rows {
        w.write_record([r.run.clone(), r.method.clone(), r.metric.clone(), fmt(r.mean), fmt(r.std), r.n_runs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Spearman correlation of every other metric with `target` across rows
/// where both are finite. `None` when undefined (fewer than two rows or a
/// constant column).
pub fn correlation_table(rows: &[RunRow], target: &str) -> Vec<(String, Option<f64>)> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        for (n, _) in &r.metrics {
            if n != target && !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let (a, b): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| Some((r.get(&name)?, r.get(target)?)))
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .unzip();
            let rho = if a.len() < 2 { None } else { spearman(&a, &b) };
            (name, rho)
        })
        .collect()
}

pub fn write_correlation_csv(path: &Path, table: &[(String, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "spearman"])?;
    for (n, rho) in table {
        w.write_record([n.clone(), rho.map_or("undefined".into(), fmt)])?;
    }
    w.flush()?;
    Ok(())
}

fn tile(images: &[Vec<Image>]) -> Result<Image> {
    let first = images.first().and_then(|r| r.first()).ok_or_else(|| Error::InvalidArgument("empty traversal".into()))?;
    let (h, w) = (first.height, first.width);
    let cols = images[0].len();
    let mut out = Image::zeros(h * images.len(), w * cols);
    for (ri, row) in images.iter().enumerate() {
        for (ci, im) in row.iter().enumerate() {
            for y in 0..h {
                let dst = (ri * h + y) * out.width + ci * w;
                out.pixels[dst..dst + w].copy_from_slice(&im.pixels[y * w..(y + 1) * w]);
            }
        }
    }
    Ok(out)
}

/// Row `k` decodes `z₀, ρ_k z₀, ρ_k² z₀, …` (`steps` columns).
pub fn traversal_grid(vae: &VaeNet<f32>, reps: &[ActionRepresentation], z0: &[f64], steps: usize) -> Result<Image> {
    if steps == 0 || reps.is_empty() {
        return Err(Error::InvalidArgument("traversal needs at least one representation and one step".into()));
    }
    let rows = reps
        .iter()
        .map(|rep| {
            let mut codes = vec![z0.to_vec()];
            while codes.len() < steps {
                let next = rep.apply(codes.last().expect("non-empty"));
                codes.push(next);
            }
            vae.decode_many(&codes)
        })
        .collect::<Result<Vec<_>>>()?;
    tile(&rows)
}

/// Row `i` sweeps latent `i` over `[-range, range]` with the others at zero.
pub fn latent_traversal(vae: &VaeNet<f32>, steps: usize, range: f64) -> Result<Image> {
    if steps < 2 {
        return Err(Error::InvalidArgument("latent traversal needs at least two steps".into()));
    }
    let l = vae.latent_dim();
    let rows = (0..l)
        .map(|i| {
            let codes: Vec<Vec<f64>> = (0..steps)
                .map(|s| {
                    let mut z = vec![0.0; l];
                    z[i] = -range + 2.0 * range * s as f64 / (steps - 1) as f64;
                    z
                })
                .collect();
            vae.decode_many(&codes)
        })
        .collect::<Result<Vec<_>>>()?;
    tile(&rows)
}

/// Columns `metric, mean, std, n_runs`, one row per metric.
pub fn write_report_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "mean", "std", "n_runs"])?;
    for r in rows {
        w.write_record([r.metric.clone(), fmt(r.mean), fmt(r.std), r.n_runs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
