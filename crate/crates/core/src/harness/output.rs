//! CSV emission and the `report` aggregation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::runner::{mean_std, ExperimentResult};

pub const DETAIL_HEADER: [&str; 8] = ["method", "scenario", "arch", "seed", "lambda", "after_task", "eval_task", "accuracy"];
pub const SUMMARY_HEADER: [&str; 5] = ["method", "scenario", "mean_avg_acc", "std_avg_acc", "n_seeds"];
pub const SENSITIVITY_HEADER: [&str; 7] = ["method", "scenario", "lambda", "after_task", "mean_avg_acc", "std_avg_acc", "n_seeds"];

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Shortest decimal form of a coefficient (`0.01`, `10`, `1000`).
pub fn fmt_lambda(x: f64) -> String {
    format!("{x}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// `<prefix>.csv` and `<prefix>_summary.csv`.
pub fn output_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = prefix.to_string_lossy().trim_end_matches(".csv").to_string();
    (PathBuf::from(format!("{base}.csv")), PathBuf::from(format!("{base}_summary.csv")))
}

/// Writes per-(seed, after_task, eval_task) detail rows and one summary row
/// per result. Rows follow the order of `results`, then seeds, tasks.
pub fn emit_results(results: &[ExperimentResult], detail: &Path, summary: &Path) -> Result<()> {
    let mut w = writer(detail)?;
    w.write_record(DETAIL_HEADER).map_err(|e| csv_err(detail, e))?;
    for r in results {
        for run in &r.runs {
            for (after, row) in run.matrix.rows() {
                for (j, acc) in row.iter().enumerate() {
                    w.write_record([
                        r.method.clone(),
                        r.scenario.clone(),
                        r.arch.as_str().to_string(),
                        run.seed.to_string(),
                        fmt_lambda(r.lambda),
                        after.to_string(),
                        (j + 1).to_string(),
                        f4(*acc),
                    ])
                    .map_err(|e| csv_err(detail, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(detail, e))?;

    let mut s = writer(summary)?;
    s.write_record(SUMMARY_HEADER).map_err(|e| csv_err(summary, e))?;
    for r in results {
        let finals: Vec<f64> = r.runs.iter().filter_map(|run| run.matrix.final_average().ok()).collect();
        if finals.is_empty() {
            continue;
        }
        let (m, sd) = mean_std(&finals);
        s.write_record([r.method.clone(), r.scenario.clone(), f4(m), f4(sd), finals.len().to_string()])
            .map_err(|e| csv_err(summary, e))?;
    }
    s.flush().map_err(|e| Error::io(summary, e))?;
    Ok(())
}

/// One parsed detail row.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub method: String,
    pub scenario: String,
    pub arch: String,
    pub seed: u64,
    pub lambda: f64,
    pub after_task: usize,
    pub eval_task: usize,
    pub accuracy: f64,
}

pub fn read_detail(path: &Path) -> Result<Vec<DetailRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(DETAIL_HEADER) {
        return Err(Error::Config(format!("{}: not a detail results file", path.display())));
    }
    let bad = |line: u64, what: &str| Error::Config(format!("{}:{line}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(DetailRow {
            method: rec[0].to_string(),
            scenario: rec[1].to_string(),
            arch: rec[2].to_string(),
            seed: rec[3].parse().map_err(|_| bad(line, "seed"))?,
            lambda: rec[4].parse().map_err(|_| bad(line, "lambda"))?,
            after_task: rec[5].parse().map_err(|_| bad(line, "after_task"))?,
            eval_task: rec[6].parse().map_err(|_| bad(line, "eval_task"))?,
            accuracy: rec[7].parse().map_err(|_| bad(line, "accuracy"))?,
        });
    }
    Ok(rows)
}

/// Mean/std over seeds of the average accuracy after `after_task`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub method: String,
    pub scenario: String,
    pub lambda: f64,
    pub after_task: usize,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// (method, scenario, λ bits, after_task).
type SeriesKey = (String, String, u64, usize);

/// Aggregates detail rows into per-(method, scenario, λ, after_task)
/// average accuracies over seeds.
pub fn series(rows: &[DetailRow]) -> Vec<SeriesPoint> {
    let mut acc: BTreeMap<SeriesKey, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    let mut order: Vec<SeriesKey> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.scenario.clone(), r.lambda.to_bits(), r.after_task);
        if !acc.contains_key(&key) {
            order.push(key.clone());
        }
        let e = acc.entry(key).or_default().entry(r.seed).or_insert((0.0, 0));
        e.0 += r.accuracy;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let seeds = &acc[&key];
            let avgs: Vec<f64> = seeds.values().map(|(s, n)| s / *n as f64).collect();
            let (mean, std) = mean_std(&avgs);
            SeriesPoint {
                method: key.0,
                scenario: key.1,
                lambda: f64::from_bits(key.2),
                after_task: key.3,
                mean,
                std,
                n_seeds: avgs.len(),
            }
        })
        .collect()
}

/// Final-task points only, keeping the best λ per (method, scenario)
/// (ties to the smaller λ).
pub fn table(points: &[SeriesPoint]) -> Vec<SeriesPoint> {
    let mut last: BTreeMap<(String, String, u64), usize> = BTreeMap::new();
    for p in points {
        let k = (p.method.clone(), p.scenario.clone(), p.lambda.to_bits());
        let e = last.entry(k).or_insert(0);
        *e = (*e).max(p.after_task);
    }
    let mut out: Vec<SeriesPoint> = Vec::new();
    for p in points {
        if last[&(p.method.clone(), p.scenario.clone(), p.lambda.to_bits())] != p.after_task {
            continue;
        }
        match out.iter_mut().find(|o| o.method == p.method && o.scenario == p.scenario) {
            Some(o) if o.mean > p.mean || (o.mean == p.mean && o.lambda <= p.lambda) => {}
            Some(o) => *o = p.clone(),
            None => out.push(p.clone()),
        }
    }
    out
}

pub fn write_series(points: &[SeriesPoint], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SENSITIVITY_HEADER).map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([
            p.method.clone(),
            p.scenario.clone(),
            fmt_lambda(p.lambda),
            p.after_task.to_string(),
            f4(p.mean),
            f4(p.std),
            p.n_seeds.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_table(points: &[SeriesPoint], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([p.method.clone(), p.scenario.clone(), f4(p.mean), f4(p.std), p.n_seeds.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Human-readable table in percent. `±` is the sample standard deviation
/// over seeds.
pub fn render_table(points: &[SeriesPoint], out: &mut impl Write) -> std::io::Result<()> {
    let mw = points.iter().map(|p| p.method.len()).max().unwrap_or(6).max(6);
    let sw = points.iter().map(|p| p.scenario.len()).max().unwrap_or(8).max(8);
    writeln!(out, "{:<mw$}  {:<sw$}  {:>8}  {:>16}  {:>5}", "method", "scenario", "lambda", "avg acc (%)", "seeds")?;
    for p in points {
        writeln!(
            out,
            "{:<mw$}  {:<sw$}  {:>8}  {:>8.2} ± {:<5.2}  {:>5}",
            p.method,
            p.scenario,
            fmt_lambda(p.lambda),
            100.0 * p.mean,
            100.0 * p.std,
            p.n_seeds
        )?;
    }
    writeln!(out, "(± is the sample standard deviation over seeds, not the standard error)")
}
