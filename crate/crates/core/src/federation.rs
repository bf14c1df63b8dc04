//! Federated training inside bubbles, plus the local-only and pooled FedAvg
//! baselines.
//!
//! Every bubble with more than one client runs its own FedAvg loop: clients
//! start each round from the bubble's shared weights, train locally, and the
//! server replaces the shared weights with the plain mean of what came back.
//! One-client bubbles are excluded from federation.

use std::collections::BTreeMap;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::clustering::BubbleAssignment;
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::forecaster::{
    lookback_windows, predict, train_epochs, ForecasterConfig, ModelWeights, Scaler, SequenceData,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundPlan {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Stop once the L2 change of the shared weights falls below this.
    pub tau: f64,
    /// Replace every participating client's model with the size-weighted
    /// average over bubbles after training.
    pub cross_bubble_aggregation: bool,
}

impl Default for RoundPlan {
    fn default() -> Self {
        RoundPlan { rounds: 10, local_epochs: 10, tau: 1e-4, cross_bubble_aggregation: false }
    }
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::config("rounds.rounds", "must be at least 1"));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::config("rounds.tau", "must be >= 0"));
        }
        Ok(())
    }
}

/// A client's data standardized and shaped for the forecaster.
#[derive(Debug, Clone)]
pub struct PreparedClient {
    pub client_id: String,
    pub scaler: Scaler,
    pub train: SequenceData,
    pub test: SequenceData,
    /// Test targets on the original scale.
    pub test_y: Vec<f64>,
}

impl PreparedClient {
    /// Fits a scaler on the training rows and builds train/test sequences.
    ///
    /// With `sequence_length > 1`, lookback windows are built over the rows
    /// in stored order and each window goes to the split of the row it ends at.
    pub fn new(client: &ClientDataset, sequence_length: usize) -> Result<Self> {
        let train_x = client.train_x();
        let train_y = client.train_y();
        let scaler = Scaler::fit(train_x.view(), &train_y)?;
        if sequence_length <= 1 {
            let test_y = client.test_y();
            return Ok(PreparedClient {
                client_id: client.client_id.clone(),
                train: SequenceData::from_rows(
                    scaler.transform_x(train_x.view()).view(),
                    scaler.transform_y(&train_y),
                )?,
                test: SequenceData::from_rows(
                    scaler.transform_x(client.test_x().view()).view(),
                    scaler.transform_y(&test_y),
                )?,
                test_y,
                scaler,
            });
        }
        let xs = scaler.transform_x(client.x.view());
        let ys = scaler.transform_y(&client.y);
        let (windows, ends) = lookback_windows(xs.view(), &ys, sequence_length)?;
        let mut is_test = vec![false; client.n_samples()];
        for &i in &client.test {
            is_test[i] = true;
        }
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..ends.len()).partition(|&w| is_test[ends[w]]);
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::EmptyData(format!(
                "client `{}` has too few rows for lookback {sequence_length}",
                client.client_id
            )));
        }
        Ok(PreparedClient {
            client_id: client.client_id.clone(),
            train: windows.subset(&train_idx),
            test_y: test_idx.iter().map(|&w| client.y[ends[w]]).collect(),
            test: windows.subset(&test_idx),
            scaler,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train.x.len_of(Axis(2))
    }

    /// Test-split predictions on the original target scale.
    pub fn predict_test(&self, weights: &ModelWeights) -> Result<Vec<f64>> {
        Ok(self.scaler.inverse_y(&predict(weights, self.test.x.view())?))
    }

    /// MSE on the standardized test split.
    pub fn validation_loss(&self, weights: &ModelWeights) -> Result<f64> {
        let pred = predict(weights, self.test.x.view())?;
        Ok(pred.iter().zip(&self.test.y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
            / pred.len() as f64)
    }
}

/// Element-wise arithmetic mean of weight vectors sharing one layout.
pub fn fedavg(weights: &[&ModelWeights]) -> Result<ModelWeights> {
    let Some(first) = weights.first() else {
        return Err(Error::invalid("fedavg of zero models"));
    };
    if weights.iter().any(|w| w.layout != first.layout) {
        return Err(Error::LayoutMismatch);
    }
    // mean as first + Σ(w − first)/n, so averaging identical vectors is exact
    let n = weights.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for w in &weights[1..] {
        for ((a, v), f) in acc.iter_mut().zip(&w.values).zip(&first.values) {
            *a += v - f;
        }
    }
    let values = first.values.iter().zip(&acc).map(|(f, a)| f + a / n).collect();
    ModelWeights::from_flat(first.layout.clone(), values)
}

/// Size-weighted average of bubble models over bubbles with more than one
/// client.
pub fn aggregate_global(bubbles: &[(&ModelWeights, usize)]) -> Result<ModelWeights> {
    let eligible: Vec<_> = bubbles.iter().filter(|(_, size)| *size > 1).collect();
    let Some((first, _)) = eligible.first() else {
        return Err(Error::invalid("no multi-client bubble to aggregate"));
    };
    if eligible.iter().any(|(w, _)| w.layout != first.layout) {
        return Err(Error::LayoutMismatch);
    }
    let total: usize = eligible.iter().map(|(_, s)| s).sum();
    let mut values = vec![0.0; first.len()];
    for (w, size) in &eligible {
        for (a, v) in values.iter_mut().zip(&w.values) {
            *a += *size as f64 * v;
        }
    }
    values.iter_mut().for_each(|v| *v /= total as f64);
    ModelWeights::from_flat(first.layout.clone(), values)
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub method: String,
    pub bubble: usize,
    pub round: usize,
    pub weight_delta: f64,
    pub client_val_loss: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BubbleOutcome {
    /// Shared weights after the last round; every member uses them.
    pub weights: ModelWeights,
    pub log: Vec<RoundRecord>,
    pub converged: bool,
}

fn round_seed(global: u64, round: usize, client: &str) -> u64 {
    seed::derive(global, &format!("federated-round-{round}"), client)
}

/// FedAvg loop for one bubble.
///
/// A client whose local training diverges is left out of that round's
/// average and listed in the log; it stays in the bubble.
pub fn run_bubble(
    bubble: usize,
    clients: &[&PreparedClient],
    init: &ModelWeights,
    plan: &RoundPlan,
    config: &ForecasterConfig,
    global_seed: u64,
) -> Result<BubbleOutcome> {
    plan.validate()?;
    if clients.is_empty() {
        return Err(Error::invalid("bubble has no clients"));
    }
    let mut shared = init.clone();
    let mut log = Vec::with_capacity(plan.rounds);
    let mut converged = false;
    for round in 1..=plan.rounds {
        let mut updated = Vec::with_capacity(clients.len());
        let mut dropped = Vec::new();
        for c in clients {
            let seed = round_seed(global_seed, round, &c.client_id);
            match train_epochs(&shared, &c.train, config, plan.local_epochs, seed) {
                Ok(out) => updated.push(out.weights),
                Err(Error::Diverged { epoch, .. }) => {
                    log::warn!("client `{}` diverged in round {round} epoch {epoch}", c.client_id);
                    dropped.push(c.client_id.clone());
                }
                Err(e) => return Err(e),
            }
        }
        let next = if updated.is_empty() {
            shared.clone()
        } else {
            fedavg(&updated.iter().collect::<Vec<_>>())?
        };
        let delta = next.l2_distance(&shared)?;
        shared = next;
        let client_val_loss = clients
            .iter()
            .map(|c| Ok((c.client_id.clone(), c.validation_loss(&shared)?)))
            .collect::<Result<_>>()?;
        log.push(RoundRecord {
            method: String::new(),
            bubble,
            round,
            weight_delta: delta,
            client_val_loss,
            dropped,
        });
        if delta < plan.tau {
            converged = true;
            break;
        }
    }
    Ok(BubbleOutcome { weights: shared, log, converged })
}

/// Splits an assignment into multi-client bubbles and excluded singletons.
pub fn exclude_singletons(assignment: &BubbleAssignment) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut participating = Vec::new();
    let mut excluded = Vec::new();
    for members in assignment.bubbles() {
        if members.len() > 1 {
            participating.push(members);
        } else {
            excluded.extend(members);
        }
    }
    (participating, excluded)
}

/// Per-client weights from one method; `None` marks an excluded client.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub client_weights: Vec<Option<ModelWeights>>,
    /// Bubble models keyed by bubble id.
    pub bubble_weights: BTreeMap<usize, ModelWeights>,
    pub log: Vec<RoundRecord>,
    pub loss_curves: BTreeMap<String, Vec<f64>>,
    pub global: Option<ModelWeights>,
}

/// Independent training of every client on its own data.
pub fn run_baseline_local(
    clients: &[PreparedClient],
    init: &ModelWeights,
    config: &ForecasterConfig,
    epochs: usize,
    global_seed: u64,
) -> Result<MethodOutcome> {
    if clients.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    let mut client_weights = Vec::with_capacity(clients.len());
    let mut loss_curves = BTreeMap::new();
    for c in clients {
        let seed = seed::derive(global_seed, "local-train", &c.client_id);
        let out = train_epochs(init, &c.train, config, epochs, seed)?;
        loss_curves.insert(c.client_id.clone(), out.losses);
        client_weights.push(Some(out.weights));
    }
    Ok(MethodOutcome {
        client_weights,
        bubble_weights: BTreeMap::new(),
        log: Vec::new(),
        loss_curves,
        global: None,
    })
}

fn tag(mut log: Vec<RoundRecord>, method: &str) -> Vec<RoundRecord> {
    for r in &mut log {
        r.method = method.to_string();
    }
    log
}

/// FedAvg over all clients as a single bubble.
pub fn run_baseline_pooled(
    clients: &[PreparedClient],
    init: &ModelWeights,
    plan: &RoundPlan,
    config: &ForecasterConfig,
    global_seed: u64,
) -> Result<MethodOutcome> {
    let refs: Vec<&PreparedClient> = clients.iter().collect();
    let out = run_bubble(0, &refs, init, plan, config, global_seed)?;
    Ok(MethodOutcome {
        client_weights: vec![Some(out.weights.clone()); clients.len()],
        bubble_weights: BTreeMap::from([(0, out.weights)]),
        log: tag(out.log, "pooled"),
        loss_curves: BTreeMap::new(),
        global: None,
    })
}

/// FedAvg inside every multi-client bubble of `assignment`; singletons are
/// excluded. With `plan.cross_bubble_aggregation`, participating clients end
/// with the size-weighted global model instead of their bubble's model.
pub fn run_clustered(
    clients: &[PreparedClient],
    assignment: &BubbleAssignment,
    init: &ModelWeights,
    plan: &RoundPlan,
    config: &ForecasterConfig,
    global_seed: u64,
) -> Result<MethodOutcome> {
    if assignment.labels.len() != clients.len() {
        return Err(Error::LengthMismatch { expected: clients.len(), actual: assignment.labels.len() });
    }
    let (participating, excluded) = exclude_singletons(assignment);
    for &e in &excluded {
        log::info!("client `{}` is alone in its bubble and excluded", clients[e].client_id);
    }
    let mut client_weights = vec![None; clients.len()];
    let mut bubble_weights = BTreeMap::new();
    let mut log = Vec::new();
    for members in &participating {
        let bubble = assignment.labels[members[0]];
        let refs: Vec<&PreparedClient> = members.iter().map(|&i| &clients[i]).collect();
        let out = run_bubble(bubble, &refs, init, plan, config, global_seed)?;
        for &i in members {
            client_weights[i] = Some(out.weights.clone());
        }
        log.extend(tag(out.log, "pa_cfl"));
        bubble_weights.insert(bubble, out.weights);
    }
    let global = if participating.is_empty() {
        None
    } else {
        let sized: Vec<(&ModelWeights, usize)> = participating
            .iter()
            .map(|m| (&bubble_weights[&assignment.labels[m[0]]], m.len()))
            .collect();
        Some(aggregate_global(&sized)?)
    };
    if plan.cross_bubble_aggregation {
        if let Some(g) = &global {
            for w in client_weights.iter_mut().flatten() {
                *w = g.clone();
            }
        }
    }
    Ok(MethodOutcome { client_weights, bubble_weights, log, loss_curves: BTreeMap::new(), global })
}
