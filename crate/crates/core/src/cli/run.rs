//! Executes a run descriptor and writes the artifact tree.
//!
//! ```text
//! <out>/summary.csv
//! <out>/<strategy>/<seed>/rounds.csv
//! <out>/<strategy>/<seed>/metrics.csv
//! <out>/<strategy>/<seed>/trajectories.csv
//! <out>/<strategy>/<seed>/clients.csv
//! <out>/<strategy>/<seed>/checkpoint/{global,local_<k>}.{fapv,manifest.toml}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{strategy_label, RunDescriptor, SweepKey};
use crate::datagen::{client_sizes, generate, ClientShard};
use crate::error::{Error, Result};
use crate::fedsim::{
    csv_writer, fmt_f64, run_federated, save_checkpoint, save_round_csv, select_and_evaluate,
    MetricSummary, Strategy,
};

/// Outcome of one (strategy, seed) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub summary: MetricSummary,
    pub dir: PathBuf,
}

/// Mean and sample standard deviation (n - 1) of each summary metric.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub label: String,
    pub runs: usize,
    pub global_test_avg: (f64, f64),
    pub local_avg: (f64, f64),
    pub local_gen: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<StrategySummary>,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Mean and sample standard deviation; the deviation is NaN for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_one(desc: &RunDescriptor, out: &Path, strategy: Strategy, seed: u64) -> Result<RunRecord> {
    let label = strategy_label(&strategy);
    let wrap = |e: Error| Error::InRun {
        label: label.clone(),
        seed,
        source: Box::new(e),
    };
    let data = desc.dataset_spec(seed).map_err(wrap)?;
    let shards = generate(&data).map_err(wrap)?;
    let model = desc.model_spec().map_err(wrap)?;
    let cfg = desc.fl_config(strategy, seed);
    let run = run_federated(&model, &cfg, &shards).map_err(wrap)?;
    let eval = select_and_evaluate(&run, &model, &shards).map_err(wrap)?;

    let dir = out.join(&label).join(seed.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rounds = dir.join("rounds.csv");
    save_round_csv(&rounds, &run.history)?;
    eval.matrix.save_csv(&dir.join("metrics.csv"))?;
    write_trajectories(&rounds, &dir.join("trajectories.csv"))?;
    write_clients(&dir.join("clients.csv"), &shards)?;
    let ckpt = dir.join("checkpoint");
    if let Some(g) = &run.selection.best_global {
        save_checkpoint(&ckpt, "global", &label, g)?;
    }
    for (k, c) in run.selection.best_local.iter().enumerate() {
        save_checkpoint(&ckpt, &format!("local_{k}"), &label, c)?;
    }
    Ok(RunRecord {
        label,
        seed,
        summary: eval.summary,
        dir,
    })
}

/// `client,n_train,n_total,fraction_train,fraction_total`. Aggregation uses
/// the train fractions.
fn write_clients(path: &Path, shards: &[ClientShard]) -> Result<()> {
    let (train, n) = client_sizes(shards);
    let totals: Vec<usize> = shards.iter().map(ClientShard::n_total).collect();
    let total: usize = totals.iter().sum();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv_writer(file);
    w.write_record([
        "client",
        "n_train",
        "n_total",
        "fraction_train",
        "fraction_total",
    ])
    .map_err(csv_err(path))?;
    for (k, (&nt, &nk)) in train.iter().zip(&totals).enumerate() {
        w.write_record([
            k.to_string(),
            nt.to_string(),
            nk.to_string(),
            fmt_f64(nt as f64 / n as f64),
            fmt_f64(nk as f64 / total as f64),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every (strategy, seed) pair, in parallel, into `out`.
pub fn run_into(desc: &RunDescriptor, out: &Path) -> Result<RunReport> {
    let jobs: Vec<(Strategy, u64)> = desc
        .strategies
        .iter()
        .flat_map(|s| desc.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(s, seed)| run_one(desc, out, s, seed))
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize(&records);
    write_summary(&out.join("summary.csv"), &summaries)?;
    Ok(RunReport { records, summaries })
}

pub fn run(desc: &RunDescriptor) -> Result<RunReport> {
    run_into(desc, &desc.output_dir)
}

/// Groups records by strategy, keeping first-appearance order.
pub fn summarize(records: &[RunRecord]) -> Vec<StrategySummary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&MetricSummary> = records
                .iter()
                .filter(|r| r.label == label)
                .map(|r| &r.summary)
                .collect();
            let col = |f: fn(&MetricSummary) -> f64| {
                mean_std(&group.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            StrategySummary {
                label: label.to_string(),
                runs: group.len(),
                global_test_avg: col(|s| s.global_test_avg),
                local_avg: col(|s| s.local_avg),
                local_gen: col(|s| s.local_gen),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 7] = [
    "global_test_avg_mean",
    "global_test_avg_std",
    "local_avg_mean",
    "local_avg_std",
    "local_gen_mean",
    "local_gen_std",
    "runs",
];

fn summary_fields(s: &StrategySummary) -> Vec<String> {
    vec![
        fmt_f64(s.global_test_avg.0),
        fmt_f64(s.global_test_avg.1),
        fmt_f64(s.local_avg.0),
        fmt_f64(s.local_avg.1),
        fmt_f64(s.local_gen.0),
        fmt_f64(s.local_gen.1),
        s.runs.to_string(),
    ]
}

/// `strategy,global_test_avg_mean,global_test_avg_std,...,runs`.
pub fn write_summary(path: &Path, summaries: &[StrategySummary]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv_writer(file);
    let mut header = vec!["strategy"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header).map_err(csv_err(path))?;
    for s in summaries {
        let mut row = vec![s.label.clone()];
        row.extend(summary_fields(s));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sweep_value_name(key: SweepKey, value: f64) -> String {
    format!("{}_{}", key.name(), value)
}

/// Runs the descriptor once per sweep value into `<out>/<key>_<value>/` and
/// writes `<out>/sweep_<key>.csv`.
pub fn sweep(desc: &RunDescriptor, key: SweepKey, values: &[f64]) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let d = desc.with_override(key, v)?;
        let report = run_into(&d, &desc.output_dir.join(sweep_value_name(key, v)))?;
        rows.push((v, report.summaries));
    }
    let path = desc.output_dir.join(format!("sweep_{}.csv", key.name()));
    write_sweep_table(&path, key, &rows)?;
    Ok(path)
}

fn write_sweep_table(
    path: &Path,
    key: SweepKey,
    rows: &[(f64, Vec<StrategySummary>)],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv_writer(file);
    let mut header = vec![key.name(), "strategy"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header).map_err(csv_err(path))?;
    for (v, summaries) in rows {
        for s in summaries {
            let mut row = vec![fmt_f64(*v), s.label.clone()];
            row.extend(summary_fields(s));
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_summary(path: &Path) -> Result<Vec<StrategySummary>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", rec.len())));
        }
        let f = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("field {i}: {e}")))
        };
        out.push(StrategySummary {
            label: rec[0].to_string(),
            global_test_avg: (f(1)?, f(2)?),
            local_avg: (f(3)?, f(4)?),
            local_gen: (f(5)?, f(6)?),
            runs: rec[7].parse().map_err(|e| bad(format!("runs: {e}")))?,
        });
    }
    Ok(out)
}

/// Converts a `rounds.csv` into long format `round,series,value`, one row
/// per non-empty cell. Series are the rounds.csv column names.
pub fn write_trajectories(rounds_csv: &Path, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(rounds_csv).map_err(csv_err(rounds_csv))?;
    let header = r.headers().map_err(csv_err(rounds_csv))?.clone();
    if header.get(0) != Some("round") {
        return Err(Error::Format {
            path: rounds_csv.to_path_buf(),
            reason: "first column must be `round`".into(),
        });
    }
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = csv_writer(file);
    w.write_record(["round", "series", "value"])
        .map_err(csv_err(out))?;
    for rec in r.records() {
        let rec = rec.map_err(csv_err(rounds_csv))?;
        for (name, value) in header.iter().zip(rec.iter()).skip(1) {
            if name == "phase_flags" || value.is_empty() {
                continue;
            }
            w.write_record([&rec[0], name, value])
                .map_err(csv_err(out))?;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))
}

/// Regenerates every `trajectories.csv` below the descriptor's output
/// directory, and the sweep table when the descriptor declares a sweep.
/// Returns the files written.
pub fn emit_trajectories(desc: &RunDescriptor) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut roots = vec![desc.output_dir.clone()];
    if let Some(sw) = &desc.sweep {
        roots = sw
            .values
            .iter()
            .map(|&v| desc.output_dir.join(sweep_value_name(sw.key, v)))
            .collect();
    }
    for root in &roots {
        for s in &desc.strategies {
            for seed in &desc.seeds {
                let dir = root.join(strategy_label(s)).join(seed.to_string());
                let out = dir.join("trajectories.csv");
                write_trajectories(&dir.join("rounds.csv"), &out)?;
                written.push(out);
            }
        }
    }
    if let Some(sw) = &desc.sweep {
        let rows = sw
            .values
            .iter()
            .zip(&roots)
            .map(|(&v, root)| Ok((v, read_summary(&root.join("summary.csv"))?)))
            .collect::<Result<Vec<_>>>()?;
        let path = desc.output_dir.join(format!("sweep_{}.csv", sw.key.name()));
        write_sweep_table(&path, sw.key, &rows)?;
        written.push(path);
    }
    Ok(written)
}
