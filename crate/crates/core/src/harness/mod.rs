//! Configuration, workload synthesis, end-to-end runs, sweeps and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod sweep;
pub mod synth;

pub use config::{Bimodal, Metrics, Mode, RunConfig, Workload};
pub use report::{EcpSummary, LayerReport, SimReport, StratSplit, TileSummary, Totals};
pub use run::{run, run_config, Inputs};
pub use sweep::{apply, sweep, SweepParam, SweepPoint, SweepResult, SweepRow};
pub use synth::{random_weights, synth_features, synth_input, synth_weights, synth_workload};
