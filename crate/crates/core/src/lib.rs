//! Clustered federated learning with a differentially-private clustering
//! signature.
//!
//! Every client trains a gradient-boosted tree ensemble on its own data and
//! releases only a Laplace-perturbed feature-importance distribution. The
//! server groups clients into *bubbles* by average-linkage agglomeration over
//! the earth mover's distance between those distributions, picking the number
//! of bubbles with the Davies-Bouldin index. Each multi-client bubble then
//! runs its own FedAvg loop over a small transformer regressor; one-client
//! bubbles are flagged and kept out of federation.
//!
//! The pipeline stages live in separate modules:
//!
//! * [`dataset`] - CSV ingestion, encoding, feature selection, client
//!   partitioning and a synthetic heterogeneous-client generator.
//! * [`boosting`] - regression-tree boosting, gain importance and
//!   leave-one-out local sensitivity.
//! * [`privacy`] - the Laplace mechanism.
//! * [`clustering`] - EMD, average linkage, Davies-Bouldin and bubble selection.
//! * [`forecaster`] - transformer encoder regressor with exact backprop.
//! * [`federation`] - per-bubble FedAvg and the local / pooled baselines.
//! * [`evaluation`] - RMSE / MAE / R² and comparison reports.
//! * [`experiment`] - config loading and the end-to-end runner behind the CLI.

pub mod boosting;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod federation;
pub mod forecaster;
pub mod privacy;
pub mod seed;

pub use error::{Error, Result};
