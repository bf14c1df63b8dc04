//! Tabular demand data: ingestion, encoding, feature selection, client
//! partitioning, and a synthetic generator of heterogeneous clients.

mod encode;
mod partition;
mod select;
mod synthetic;
mod table;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use encode::{encode_features, MISSING_CATEGORY};
pub use partition::{partition_by_region, MIN_CLIENT_SAMPLES};
pub use select::{
    pearson, prune_correlated, rank_features_anova, FeatureScore, Pruned,
    DEFAULT_CORRELATION_THRESHOLD, DEFAULT_P_THRESHOLD, DEFAULT_TOP_K,
};
pub use synthetic::{generate_synthetic, RegimeSpec, SyntheticData, SyntheticSpec};
pub use table::{ingest_csv, load_schema, Cell, Column, ColumnKind, RawTable, Schema};

use crate::error::{Error, Result};

/// One client's local data with a fixed train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: String,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl ClientDataset {
    /// Builds a client after checking shape, finiteness and that `train` and
    /// `test` partition the rows.
    pub fn new(
        client_id: impl Into<String>,
        x: Array2<f64>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        train: Vec<usize>,
        test: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: y.len() });
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::LengthMismatch { expected: x.ncols(), actual: feature_names.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("client data contains NaN or Inf"));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(test.iter()) {
            if i >= n || seen[i] {
                return Err(Error::invalid("train/test indices must partition the rows"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("train/test indices must cover every row"));
        }
        Ok(ClientDataset {
            client_id: client_id.into(),
            x,
            y,
            feature_names,
            train,
            test,
            seed,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn train_x(&self) -> Array2<f64> {
        self.x.select(Axis(0), &self.train)
    }

    pub fn train_y(&self) -> Vec<f64> {
        self.train.iter().map(|&i| self.y[i]).collect()
    }

    pub fn test_x(&self) -> Array2<f64> {
        self.x.select(Axis(0), &self.test)
    }

    pub fn test_y(&self) -> Vec<f64> {
        self.test.iter().map(|&i| self.y[i]).collect()
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> ClientDataset {
        ClientDataset {
            x: self.x.select(Axis(1), columns),
            feature_names: columns.iter().map(|&j| self.feature_names[j].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Checks that every client shares one feature layout.
pub fn check_shared_features(clients: &[ClientDataset]) -> Result<()> {
    let Some(first) = clients.first() else {
        return Err(Error::EmptyData("no clients".into()));
    };
    for c in clients {
        if c.feature_names != first.feature_names {
            return Err(Error::Schema(format!(
                "client `{}` feature layout differs from `{}`",
                c.client_id, first.client_id
            )));
        }
    }
    Ok(())
}
