//! Federated protocol engine: local training, aggregation-weight learning,
//! aggregation, communication accounting, and model selection.

mod checkpoint;
mod config;
mod engine;
mod ledger;
mod log;
mod metrics;

pub use checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint, Manifest};
pub use config::{AlphaInit, FlConfig, Strategy};
pub use engine::{
    learn_agg_weights, local_train, proximal_term, run_federated, sample_batch,
    weights_from_concentration, Checkpoint, LocalOutcome, RunOutput, Selection, SessionOutcome,
};
pub use ledger::{beta_byte_fraction, extra_comm_ratio, ledger_ratio, CommLedger, Traffic};
pub(crate) use log::csv_writer;
pub use log::{fmt_f64, save_round_csv, write_round_csv, Phases, RoundLog};
pub use metrics::{select_and_evaluate, Evaluation, MetricSummary, MetricsMatrix};
