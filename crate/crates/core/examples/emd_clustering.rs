//! Noisy importance release, EMD distances, the Davies-Bouldin trace and
//! the resulting bubbles.
//!
//! ```text
//! cargo run --release --example emd_clustering [epsilon]
//! ```

use bubblefl::boosting::GbtConfig;
use bubblefl::clustering::{assign_bubbles, pairwise_distances, DbiVariant, Metric};
use bubblefl::dataset::{generate_synthetic, RegimeSpec, SyntheticSpec};
use bubblefl::experiment::release_importance;
use bubblefl::privacy::PrivacyBudget;

fn main() -> bubblefl::Result<()> {
    let epsilon: f64 = std::env::args().nth(1).map(|a| a.parse().expect("epsilon")).unwrap_or(10.0);
    let budget = PrivacyBudget::new(epsilon)?;

    // three regimes, each driven by one feature, six positions apart
    let spec = SyntheticSpec {
        clients_per_regime: vec![4, 4, 4],
        samples_per_client: 400,
        n_features: 13,
        regimes: (0..3).map(|r| RegimeSpec { dominant_features: vec![6 * r], coefficients: vec![1.5] }).collect(),
        seed: 0,
        ..Default::default()
    };
    let data = generate_synthetic(&spec)?;
    let release = release_importance(&data.clients, &GbtConfig::default(), budget, Some(20), 0)?;
    let dm = pairwise_distances(&release.noisy, Metric::Emd)?;

    for variant in [DbiVariant::AsWritten, DbiVariant::Standard] {
        let a = assign_bubbles(&dm, None, None, variant)?;
        println!("{variant:?}: k* = {}", a.k_star);
        for (k, dbi) in &a.dbi_by_k {
            println!("  k {k:>2}  DBI {dbi:.5}");
        }
        for (b, members) in a.bubbles().iter().enumerate() {
            let names: Vec<&str> = members.iter().map(|&i| data.clients[i].client_id.as_str()).collect();
            let tag = if members.len() == 1 { " (excluded)" } else { "" };
            println!("  bubble {b}: {}{tag}", names.join(", "));
        }
    }
    println!("ground truth regimes: {:?}", data.labels);
    Ok(())
}
