//! Run summaries and the cross-run report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tngps_core::search::TraceRecord;

/// One search run on one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub tensor_id: String,
    pub algorithm: String,
    pub f_value: f64,
    pub rse: f64,
    pub log10_cr: f64,
    pub samples_to_best: usize,
    pub total_samples: usize,
    pub best_genes: Vec<usize>,
}

pub const ROW_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.jsonl";

pub struct Run {
    pub row: RunRow,
    pub f_values: Vec<f64>,
}

pub fn load_run(dir: &Path) -> Result<Run> {
    let row_path = dir.join(ROW_FILE);
    let row: RunRow = serde_json::from_str(
        &fs::read_to_string(&row_path).with_context(|| format!("reading {}", row_path.display()))?,
    )
    .with_context(|| format!("parsing {}", row_path.display()))?;
    let trace_path = dir.join(TRACE_FILE);
    let text = fs::read_to_string(&trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let f_values = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<TraceRecord>(l).map(|r| r.f_value))
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", trace_path.display()))?;
    Ok(Run { row, f_values })
}

pub fn running_min(values: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|&v| {
            best = best.min(v);
            best
        })
        .collect()
}

/// Mean running-minimum curve per algorithm, truncated to the shortest run.
pub fn curves(runs: &[Run]) -> BTreeMap<String, Vec<f64>> {
    let mut by_algo: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for run in runs {
        by_algo.entry(run.row.algorithm.clone()).or_default().push(running_min(&run.f_values));
    }
    by_algo
        .into_iter()
        .map(|(algo, curves)| {
            let len = curves.iter().map(Vec::len).min().unwrap_or(0);
            let mean = (0..len).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect();
            (algo, mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub algorithm: String,
    pub runs: usize,
    pub mean_log10_cr: f64,
    pub mean_rse: f64,
    pub mean_f_value: f64,
    pub mean_samples_to_best: f64,
}

pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let mut by_algo: BTreeMap<&str, Vec<&RunRow>> = BTreeMap::new();
    for row in rows {
        by_algo.entry(&row.algorithm).or_default().push(row);
    }
    by_algo
        .into_iter()
        .map(|(algo, rows)| {
            let n = rows.len() as f64;
            let mean = |f: fn(&RunRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            Aggregate {
                algorithm: algo.to_string(),
                runs: rows.len(),
                mean_log10_cr: mean(|r| r.log10_cr),
                mean_rse: mean(|r| r.rse),
                mean_f_value: mean(|r| r.f_value),
                mean_samples_to_best: mean(|r| r.samples_to_best as f64),
            }
        })
        .collect()
}

pub fn curves_csv(curves: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::from("algorithm,samples,objective\n");
    for (algo, curve) in curves {
        for (i, v) in curve.iter().enumerate() {
            let _ = writeln!(out, "{algo},{},{v}", i + 1);
        }
    }
    out
}

pub fn rows_csv(rows: &[RunRow]) -> String {
    let mut out = String::from("tensor_id,algorithm,f_value,rse,log10_cr,samples_to_best\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.tensor_id, r.algorithm, r.f_value, r.rse, r.log10_cr, r.samples_to_best);
    }
    out
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from("algorithm,runs,mean_log10_cr,mean_rse,mean_f_value,mean_samples_to_best\n");
    for a in aggs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.algorithm, a.runs, a.mean_log10_cr, a.mean_rse, a.mean_f_value, a.mean_samples_to_best
        );
    }
    out
}

/// Writes `curves.csv`, `rows.csv` and `aggregate.csv` for the given runs.
pub fn write_report(run_dirs: &[impl AsRef<Path>], out: &Path) -> Result<Vec<Aggregate>> {
    if run_dirs.is_empty() {
        bail!("no run directories given");
    }
    let runs: Vec<Run> = run_dirs.iter().map(|d| load_run(d.as_ref())).collect::<Result<_>>()?;
    let rows: Vec<RunRow> = runs.iter().map(|r| r.row.clone()).collect();
    let aggs = aggregate(&rows);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("curves.csv"), curves_csv(&curves(&runs)))?;
    fs::write(out.join("rows.csv"), rows_csv(&rows))?;
    fs::write(out.join("aggregate.csv"), aggregate_csv(&aggs))?;
    Ok(aggs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(algo: &str, cr: f64, rse: f64) -> RunRow {
        RunRow {
            tensor_id: "t".into(),
            algorithm: algo.into(),
            f_value: 1.0,
            rse,
            log10_cr: cr,
            samples_to_best: 4,
            total_samples: 10,
            best_genes: vec![1],
        }
    }

    #[test]
    fn running_min_is_monotone() {
        assert_eq!(running_min(&[3.0, 4.0, 1.0, 2.0]), vec![3.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn aggregate_is_the_mean() {
        let a = aggregate(&[row("x", 1.0, 0.1), row("x", 2.0, 0.3), row("y", 5.0, 0.0)]);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].runs, 2);
        assert!((a[0].mean_log10_cr - 1.5).abs() < 1e-15);
        assert!((a[0].mean_rse - 0.2).abs() < 1e-15);
    }

    #[test]
    fn curves_average_per_algorithm() {
        let runs = vec![
            Run { row: row("x", 0.0, 0.0), f_values: vec![4.0, 2.0, 3.0] },
            Run { row: row("x", 0.0, 0.0), f_values: vec![2.0, 5.0] },
        ];
        assert_eq!(curves(&runs)["x"], vec![3.0, 2.0]);
    }
}
