use std::io::Write;
use std::path::Path;

use crate::aggregate::{AggWeights, KpMatrix};
use crate::error::{Error, Result};

/// Which parts of a round ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Phases {
    pub local: bool,
    pub learn: bool,
    pub aggregate: bool,
}

impl Phases {
    /// `L` local training, `W` weight learning, `A` aggregation.
    pub fn flags(&self) -> String {
        let mut s = String::new();
        if self.local {
            s.push('L');
        }
        if self.learn {
            s.push('W');
        }
        if self.aggregate {
            s.push('A');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub phases: Phases,
    /// Weights used to aggregate this round (`None` for local-only runs).
    pub alpha: Option<AggWeights>,
    pub beta: Option<KpMatrix>,
    pub train_loss: Vec<f64>,
    /// Each local model on its own client's validation split.
    pub local_val: Vec<f64>,
    /// The global model on each client's validation split.
    pub global_val: Option<Vec<f64>>,
    pub global_val_avg: Option<f64>,
    pub cumulative_model_bytes: u64,
    pub cumulative_beta_bytes: u64,
    /// Reason a weight-learning session was abandoned, if it was.
    pub session_event: Option<String>,
}

/// Round-trippable text form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn alpha_shape(history: &[RoundLog]) -> (usize, usize) {
    history
        .iter()
        .find_map(|r| r.alpha.as_ref().map(|a| (a.clients(), a.groups())))
        .unwrap_or((0, 0))
}

/// One row per round:
/// `round, phase_flags, alpha_<k>_<p>..., train_loss_<k>..., val_<k>...,
/// global_val_avg, cumulative_model_bytes, cumulative_beta_bytes`.
/// Alpha columns run over `k` fastest (column-major); they are absent for
/// local-only runs, as is the `global_val_avg` value.
pub fn write_round_csv<W: Write>(out: W, history: &[RoundLog]) -> Result<()> {
    let clients = history.first().map_or(0, |r| r.train_loss.len());
    let (ak, ap) = alpha_shape(history);
    let mut header = vec!["round".to_string(), "phase_flags".to_string()];
    for p in 0..ap {
        for k in 0..ak {
            header.push(format!("alpha_{k}_{p}"));
        }
    }
    header.extend((0..clients).map(|k| format!("train_loss_{k}")));
    header.extend((0..clients).map(|k| format!("val_{k}")));
    header.extend(
        [
            "global_val_avg",
            "cumulative_model_bytes",
            "cumulative_beta_bytes",
        ]
        .map(String::from),
    );

    let mut w = csv_writer(out);
    let err = |e: csv::Error| Error::numerical(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(err)?;
    for r in history {
        let mut row = vec![r.round.to_string(), r.phases.flags()];
        match &r.alpha {
            Some(a) => row.extend(a.values().as_slice().iter().map(|&v| fmt_f64(v))),
            None => row.extend(std::iter::repeat_n(String::new(), ak * ap)),
        }
        row.extend(r.train_loss.iter().map(|&v| fmt_f64(v)));
        row.extend(r.local_val.iter().map(|&v| fmt_f64(v)));
        row.push(r.global_val_avg.map(fmt_f64).unwrap_or_default());
        row.push(r.cumulative_model_bytes.to_string());
        row.push(r.cumulative_beta_bytes.to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_round_csv(path: &Path, history: &[RoundLog]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_round_csv(std::io::BufWriter::new(file), history).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
