//! Transformer-encoder sales regressor.
//!
//! Inputs are sequences of feature tokens: a linear embedding, a stack of
//! post-norm encoder layers (multi-head scaled dot-product self-attention and
//! a ReLU feed-forward block, each with a residual connection and layer
//! norm), and a linear head on the last token. Gradients are computed by
//! hand-written backpropagation in `f64` and weights live in one flat vector
//! so clients can be averaged.

mod attention;
mod model;
mod train;
mod weights;

use serde::{Deserialize, Serialize};

pub use attention::{attention, softmax_rows};
pub use model::{
    forward, gradient, loss_and_gradient, positional_encoding, predict, AttentionTrace, Mode,
    LAYER_NORM_EPS,
};
pub use train::{
    lookback_windows, loss_curve_csv, train_epochs, write_loss_curve, Adam, Scaler, SequenceData, TrainOutcome,
};
pub use weights::{init_weights, Layout, LayoutEntry, ModelWeights};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    /// Hidden width of the position-wise feed-forward block.
    pub ff_dim: usize,
    pub dropout_rate: f64,
    /// Tokens per sample. With 1, each sample is a single feature row; larger
    /// values build lookback windows of consecutive rows.
    pub sequence_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            n_layers: 3,
            n_heads: 8,
            model_dim: 64,
            ff_dim: 128,
            dropout_rate: 0.5,
            sequence_length: 1,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.model_dim == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::config(
                "forecaster.model_dim",
                format!("{} is not divisible by {} heads", self.model_dim, self.n_heads),
            ));
        }
        if self.ff_dim == 0 {
            return Err(Error::config("forecaster.ff_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("forecaster.dropout_rate", "must be in [0,1)"));
        }
        if self.sequence_length < 1 {
            return Err(Error::config("forecaster.sequence_length", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("forecaster.learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("forecaster.batch_size", "must be positive"));
        }
        Ok(())
    }
}
