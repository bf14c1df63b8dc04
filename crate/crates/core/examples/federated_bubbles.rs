//! Per-bubble FedAvg against the local-only and pooled baselines, using
//! the true regimes as bubbles.
//!
//! ```text
//! cargo run --release --example federated_bubbles
//! ```

use std::collections::BTreeMap;

use bubblefl::clustering::BubbleAssignment;
use bubblefl::dataset::{generate_synthetic, SyntheticSpec};
use bubblefl::evaluation::metrics;
use bubblefl::federation::{run_baseline_local, run_baseline_pooled, run_clustered, MethodOutcome, PreparedClient, RoundPlan};
use bubblefl::forecaster::{init_weights, ForecasterConfig};

fn main() -> bubblefl::Result<()> {
    let data = generate_synthetic(&SyntheticSpec { clients_per_regime: vec![3, 3, 1], seed: 5, ..Default::default() })?;
    let clients: Vec<PreparedClient> =
        data.clients.iter().map(|c| PreparedClient::new(c, 1)).collect::<bubblefl::Result<_>>()?;
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
    let init = init_weights(&config, clients[0].input_dim())?;
    let plan = RoundPlan { rounds: 5, local_epochs: 10, ..Default::default() };

    let sizes = data.labels.iter().fold(BTreeMap::new(), |mut m, l| {
        *m.entry(*l).or_insert(0) += 1;
        m
    });
    let assignment = BubbleAssignment {
        k_star: sizes.len(),
        labels: data.labels.clone(),
        singleton_flags: data.labels.iter().map(|l| sizes[l] == 1).collect(),
        dbi_by_k: BTreeMap::new(),
        forced: true,
    };

    let runs = [
        ("local", run_baseline_local(&clients, &init, &config, 50, 0)?),
        ("pooled", run_baseline_pooled(&clients, &init, &plan, &config, 0)?),
        ("bubbles", run_clustered(&clients, &assignment, &init, &plan, &config, 0)?),
    ];
    for (name, outcome) in &runs {
        report(name, &clients, outcome)?;
    }
    for r in runs[2].1.log.iter().filter(|r| r.bubble == 0) {
        println!("bubble 0 round {}: weight change {:.5}", r.round, r.weight_delta);
    }
    Ok(())
}

fn report(name: &str, clients: &[PreparedClient], outcome: &MethodOutcome) -> bubblefl::Result<()> {
    print!("{name:>8}:");
    for (c, w) in clients.iter().zip(&outcome.client_weights) {
        match w {
            Some(w) => print!("  {} {:.3}", c.client_id, metrics(&c.test_y, &c.predict_test(w)?)?.rmse),
            None => print!("  {} -", c.client_id),
        }
    }
    println!();
    Ok(())
}
