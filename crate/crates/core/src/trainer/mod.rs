//! The outer training loop: periodic exploratory-policy construction,
//! lane-split data collection, merged-batch PPO, and the two reference
//! modes (plain PPO and chained APG).

mod config;
mod metrics;
mod run;

pub use config::{Mode, TrainConfig};
pub use metrics::{advantage_gap, evaluate, format_float, write_metrics_csv, IterationMetrics, CSV_HEADER};
pub use run::{train, TrainOutput, Trainer};
