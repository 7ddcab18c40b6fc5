use std::path::Path;

use super::engine::RunOutput;
use super::log::{csv_writer, fmt_f64};
use crate::datagen::ClientShard;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;

/// Cross-evaluation scores: `local[i][j]` is client `i`'s selected local model
/// on client `j`'s test split; `global[j]` the selected global model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsMatrix {
    pub local: Vec<Vec<f64>>,
    pub global: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    /// Mean of the global row; without a global model, mean of all local entries.
    pub global_test_avg: f64,
    /// Mean of the diagonal.
    pub local_avg: f64,
    /// Mean of the off-diagonal entries.
    pub local_gen: f64,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl MetricsMatrix {
    pub fn new(local: Vec<Vec<f64>>, global: Option<Vec<f64>>) -> Result<Self> {
        let k = local.len();
        if k == 0
            || local.iter().any(|r| r.len() != k)
            || global.as_ref().is_some_and(|g| g.len() != k)
        {
            return Err(Error::config(
                "metrics matrix must be K x K with a K-entry global row",
            ));
        }
        if local
            .iter()
            .flatten()
            .chain(global.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::numerical("non-finite score in metrics matrix"));
        }
        Ok(MetricsMatrix { local, global })
    }

    pub fn clients(&self) -> usize {
        self.local.len()
    }

    pub fn summary(&self) -> MetricSummary {
        let k = self.clients();
        let diag = (0..k).map(|i| self.local[i][i]);
        let off = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)));
        MetricSummary {
            global_test_avg: match &self.global {
                Some(g) => mean(g.iter().copied()),
                None => mean(self.local.iter().flatten().copied()),
            },
            local_avg: mean(diag),
            local_gen: mean(off.map(|(i, j)| self.local[i][j])),
        }
    }

    /// `model,client_0,...` with rows `local_<i>` then `global`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(Vec::new());
        let err = |e: csv::Error| Error::numerical(format!("csv write failed: {e}"));
        let mut header = vec!["model".to_string()];
        header.extend((0..self.clients()).map(|j| format!("client_{j}")));
        w.write_record(&header).map_err(err)?;
        for (i, row) in self.local.iter().enumerate() {
            let mut rec = vec![format!("local_{i}")];
            rec.extend(row.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(err)?;
        }
        if let Some(g) = &self.global {
            let mut rec = vec!["global".to_string()];
            rec.extend(g.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::numerical(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
        let mut local = Vec::new();
        let mut global = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| fmt(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            match rec.get(0) {
                Some("global") => global = Some(values),
                Some(name) if name.starts_with("local_") => local.push(values),
                other => return Err(fmt(format!("unexpected row label {other:?}"))),
            }
        }
        MetricsMatrix::new(local, global).map_err(|e| fmt(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub matrix: MetricsMatrix,
    pub summary: MetricSummary,
}

/// Evaluates the validation-selected models on every client's test split.
pub fn select_and_evaluate(
    run: &RunOutput,
    spec: &ModelSpec,
    shards: &[ClientShard],
) -> Result<Evaluation> {
    if run.history.is_empty() {
        return Err(Error::config("empty history: nothing to select"));
    }
    if run.selection.best_local.len() != shards.len() {
        return Err(Error::config(
            "selection and shards disagree on the client count",
        ));
    }
    let local = run
        .selection
        .best_local
        .iter()
        .map(|c| {
            shards
                .iter()
                .map(|s| spec.score(&c.params, &s.test))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let global = run
        .selection
        .best_global
        .as_ref()
        .map(|c| {
            shards
                .iter()
                .map(|s| spec.score(&c.params, &s.test))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let matrix = MetricsMatrix::new(local, global)?;
    let summary = matrix.summary();
    Ok(Evaluation { matrix, summary })
}
