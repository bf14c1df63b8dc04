//! Boosted-tree feature importance and local sensitivity for synthetic
//! clients from two regimes.
//!
//! ```text
//! cargo run --release --example feature_importance
//! ```

use bubblefl::boosting::{importance_distribution, local_sensitivity, GbtConfig};
use bubblefl::dataset::{generate_synthetic, SyntheticSpec};

fn main() -> bubblefl::Result<()> {
    let spec = SyntheticSpec { clients_per_regime: vec![2, 2], n_features: 8, seed: 3, ..Default::default() };
    let data = generate_synthetic(&spec)?;
    for (r, regime) in data.regimes.iter().enumerate() {
        println!("regime {r}: features {:?} coefficients {:?}", regime.dominant_features, regime.coefficients);
    }

    let gbt = GbtConfig::default();
    for (client, regime) in data.clients.iter().zip(&data.labels) {
        let x = client.train_x();
        let y = client.train_y();
        let imp = importance_distribution(&client.client_id, x.view(), &y, &gbt)?;
        let delta = local_sensitivity(x.view(), &y, &gbt, Some(40))?;
        let bars: Vec<String> = imp.values.iter().map(|v| format!("{v:.2}")).collect();
        println!("{} (regime {regime})  [{}]  delta {:.4}", client.client_id, bars.join(" "), delta.delta);
    }
    Ok(())
}
