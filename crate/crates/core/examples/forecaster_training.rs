//! Training the transformer regressor on one client and scoring it on the
//! held-out tail.
//!
//! ```text
//! cargo run --release --example forecaster_training
//! ```

use bubblefl::dataset::{generate_synthetic, SyntheticSpec};
use bubblefl::evaluation::metrics;
use bubblefl::federation::PreparedClient;
use bubblefl::forecaster::{init_weights, train_epochs, ForecasterConfig};

fn main() -> bubblefl::Result<()> {
    let data = generate_synthetic(&SyntheticSpec { clients_per_regime: vec![1], samples_per_client: 300, ..Default::default() })?;
    let config = ForecasterConfig {
        n_layers: 1,
        n_heads: 2,
        model_dim: 16,
        ff_dim: 32,
        dropout_rate: 0.0,
        learning_rate: 0.003,
        batch_size: 32,
        ..Default::default()
    };

    for lookback in [1, 4] {
        let cfg = ForecasterConfig { sequence_length: lookback, ..config.clone() };
        let client = PreparedClient::new(&data.clients[0], lookback)?;
        let init = init_weights(&cfg, client.input_dim())?;
        let out = train_epochs(&init, &client.train, &cfg, 60, 1)?;
        let m = metrics(&client.test_y, &client.predict_test(&out.weights)?)?;
        println!(
            "lookback {lookback}: {} parameters, loss {:.4} -> {:.4}, test RMSE {:.4}, MAE {:.4}, R2 {:.4}",
            init.len(),
            out.initial_loss,
            out.losses.last().copied().unwrap_or(f64::NAN),
            m.rmse,
            m.mae,
            m.r2.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
