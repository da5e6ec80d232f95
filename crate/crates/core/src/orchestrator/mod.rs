//! Experiment configuration, run directories and the pipelines behind the
//! command-line tool: pretrain, prune, learning-curve evaluation, report
//! tables and plots.
//!
//! A run directory is `<out_root>/<first 16 hex of the config hash>/`:
//!
//! ```text
//! config.json
//! pretrain/                  checkpoint + metrics.json
//! prune-ntp/                 checkpoint + mask.bin + history.csv + metrics.json
//! prune-magnitude-s<S>/      checkpoint + mask.bin + metrics.json
//! scratch-lr<lr>.csv         scratch-training run cache
//! slc-<label>-<scheme>-lr<lr>/  report.json + curve.csv + slc.svg
//! ```

mod config;
mod experiment;
mod report;

pub use config::{DatasetSpec, ExperimentConfig, PretrainConfig, CONFIG_VERSION, OUT_ROOT_ENV};
pub use experiment::{Domains, Experiment, Method, ModelSelection, SlcArtifacts, SlcOptions, StageMetrics};
pub use report::{collect_reports, plot_report, Comparison, REPORT_COLUMNS};
