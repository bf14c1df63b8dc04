//! Experiment configuration and the end-to-end runner.
//!
//! A run loads or synthesizes client data, releases noisy importance
//! vectors, assigns bubbles, trains the requested methods and writes the
//! report and its supporting artifacts:
//!
//! | file | contents |
//! |------|----------|
//! | `report.json`, `report.csv` | per-client metrics for each method |
//! | `assignment.json` | chosen k, client to bubble map, singletons, DBI by k |
//! | `dbi_trace.csv` | DBI for every scanned k |
//! | `rounds.jsonl` | one record per bubble and round |
//! | `importance/noisy.json` | released importance vectors |
//! | `weights/<method>/*.bin` | little-endian f64 weights plus layout JSON |
//! | `loss_curves/local/*.csv` | per-epoch training loss of local models |
//! | `features.json` | feature-selection trail (CSV input only) |
//! | `manifest.json` | config echo, seed, version and a SHA-256 per file |

mod config;
mod runner;

pub use config::{
    load_config, read_config, ClusteringConfig, CsvSource, ExperimentConfig, Preprocessing,
    SchemaSource,
};
pub use runner::{
    cluster_clients, csv_clients, evaluate, load_clients, release_importance, run_experiment,
    train_methods, FeatureSelection, ImportanceRelease, LoadedData, Manifest, StageFailure,
    TrainedMethods,
};
