use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ClusteringConfig, CsvSource, ExperimentConfig, Preprocessing, SchemaSource};
use crate::boosting::{
    importance_distribution, local_sensitivity, normalize, GbtConfig, ImportanceDistribution,
    Sensitivity,
};
use crate::clustering::{assign_bubbles, pairwise_distances, BubbleAssignment, DistanceMatrix};
use crate::dataset::{
    check_shared_features, encode_features, generate_synthetic, ingest_csv, load_schema,
    partition_by_region, prune_correlated, rank_features_anova, ClientDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, ExperimentReport, Method, MethodPredictions};
use crate::federation::{
    run_baseline_local, run_baseline_pooled, run_clustered, MethodOutcome, PreparedClient,
};
use crate::forecaster::{init_weights, loss_curve_csv};
use crate::privacy::{noise_scale, perturb, LaplaceSampler, PrivacyBudget};
use crate::seed;

/// Clients of one experiment, with ground-truth regimes for synthetic data
/// and the feature-selection trail for CSV data.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub clients: Vec<ClientDataset>,
    pub regime_labels: Option<Vec<usize>>,
    pub selection: Option<FeatureSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub encoded: Vec<String>,
    pub removed_correlated: Vec<String>,
    pub zero_variance: Vec<String>,
    /// Features passing the p-value threshold, best first, with (F, p).
    pub ranked: Vec<(String, f64, f64)>,
    /// Columns kept, in encoded order.
    pub selected: Vec<String>,
}

/// Builds the client datasets named by the config. The global seed replaces
/// the synthetic spec's own seed.
pub fn load_clients(config: &ExperimentConfig) -> Result<LoadedData> {
    match (&config.synthetic, &config.csv) {
        (Some(spec), None) => {
            let mut spec = spec.clone();
            spec.seed = config.seed;
            let data = generate_synthetic(&spec)?;
            Ok(LoadedData { clients: data.clients, regime_labels: Some(data.labels), selection: None })
        }
        (None, Some(src)) => {
            let (clients, selection) = csv_clients(src, &config.preprocessing, config.seed)?;
            Ok(LoadedData { clients, regime_labels: None, selection: Some(selection) })
        }
        _ => Err(Error::config("synthetic/csv", "give exactly one data source")),
    }
}

/// Ingest, encode and split by region, then prune correlated columns and keep
/// the `top_k` ANOVA-ranked features, both fitted on the pooled training rows.
pub fn csv_clients(
    src: &CsvSource,
    pre: &Preprocessing,
    seed: u64,
) -> Result<(Vec<ClientDataset>, FeatureSelection)> {
    let schema = match &src.schema {
        SchemaSource::Inline(s) => s.clone(),
        SchemaSource::File(p) => load_schema(p)?,
    };
    let table = ingest_csv(&src.path, &schema, &src.region_column, &src.target_column)?;
    if table.dropped_rows > 0 {
        log::warn!("{} rows dropped during ingestion", table.dropped_rows);
    }
    let (encoded, names) = encode_features(&table, pre.cardinality_threshold)?;
    let clients = partition_by_region(&table, &encoded, &names, src.test_fraction, seed)?;
    if clients.is_empty() {
        return Err(Error::EmptyData("no region has enough rows".into()));
    }
    let train_x: Vec<_> = clients.iter().map(ClientDataset::train_x).collect();
    let views: Vec<_> = train_x.iter().map(|x| x.view()).collect();
    let pooled_x = concatenate(Axis(0), &views).expect("clients share the encoded width");
    let pooled_y: Vec<f64> = clients.iter().flat_map(ClientDataset::train_y).collect();

    let pruned = prune_correlated(&pooled_x, &names, pre.correlation_threshold)?;
    let ranked = rank_features_anova(&pruned.matrix, &pooled_y, pre.p_threshold)?;
    if ranked.is_empty() {
        return Err(Error::EmptyData(format!("no feature has p <= {}", pre.p_threshold)));
    }
    let mut columns: Vec<usize> = ranked.iter().take(pre.top_k).map(|s| pruned.kept[s.index]).collect();
    columns.sort_unstable();
    let selection = FeatureSelection {
        ranked: ranked.iter().map(|s| (pruned.names[s.index].clone(), s.f, s.p)).collect(),
        selected: columns.iter().map(|&j| names[j].clone()).collect(),
        encoded: names,
        removed_correlated: pruned.removed,
        zero_variance: pruned.zero_variance,
    };
    let clients = clients.iter().map(|c| c.select_columns(&columns)).collect();
    Ok((clients, selection))
}

/// What each client computes before talking to the server. Only `noisy`
/// is meant to leave the client.
#[derive(Debug, Clone)]
pub struct ImportanceRelease {
    pub clean: Vec<ImportanceDistribution>,
    pub noisy: Vec<ImportanceDistribution>,
    pub sensitivity: Vec<Sensitivity>,
    pub sigma: Vec<f64>,
}

/// Boosted-tree importance on each client's training split, its local
/// sensitivity, and the Laplace-perturbed, renormalized release.
pub fn release_importance(
    clients: &[ClientDataset],
    gbt: &GbtConfig,
    budget: PrivacyBudget,
    sensitivity_sample: Option<usize>,
    global_seed: u64,
) -> Result<ImportanceRelease> {
    let mut out = ImportanceRelease { clean: vec![], noisy: vec![], sensitivity: vec![], sigma: vec![] };
    for c in clients {
        let cfg = GbtConfig { seed: seed::derive(global_seed, "gbt", &c.client_id), ..gbt.clone() };
        let x = c.train_x();
        let y = c.train_y();
        let clean = importance_distribution(&c.client_id, x.view(), &y, &cfg)?;
        if clean.degenerate {
            log::warn!("client `{}` has no informative split; importance is uniform", c.client_id);
        }
        let delta = local_sensitivity(x.view(), &y, &cfg, sensitivity_sample)?;
        let scale = noise_scale(delta, budget);
        let mut sampler = LaplaceSampler::new(seed::derive(global_seed, "laplace", &c.client_id));
        let noisy = normalize(&c.client_id, &perturb(&clean, scale, &mut sampler), true);
        log::debug!("client `{}`: delta {:.6}, sigma {:.6}", c.client_id, delta.delta, scale.sigma);
        out.clean.push(clean);
        out.noisy.push(noisy);
        out.sensitivity.push(delta);
        out.sigma.push(scale.sigma);
    }
    Ok(out)
}

/// Server side: distances between released vectors and the bubble choice.
pub fn cluster_clients(
    noisy: &[ImportanceDistribution],
    clustering: &ClusteringConfig,
    k_override: Option<usize>,
) -> Result<(DistanceMatrix, BubbleAssignment)> {
    let n = noisy.len();
    let dm = if n == 1 { DistanceMatrix::new(1, vec![0.0])? } else { pairwise_distances(noisy, clustering.metric)? };
    let range = match (clustering.k_min, clustering.k_max) {
        (None, None) => None,
        (lo, hi) => Some(lo.unwrap_or(2)..=hi.unwrap_or(n.saturating_sub(1))),
    };
    let assignment = assign_bubbles(&dm, range, k_override, clustering.dbi)?;
    Ok((dm, assignment))
}

/// Trained models of every requested method, sharing one initialization.
#[derive(Debug, Clone)]
pub struct TrainedMethods {
    pub prepared: Vec<PreparedClient>,
    pub outcomes: BTreeMap<Method, MethodOutcome>,
}

pub fn train_methods(
    clients: &[ClientDataset],
    assignment: &BubbleAssignment,
    config: &ExperimentConfig,
) -> Result<TrainedMethods> {
    let fc = crate::forecaster::ForecasterConfig { seed: config.seed, ..config.forecaster.clone() };
    let prepared = clients
        .iter()
        .map(|c| PreparedClient::new(c, fc.sequence_length))
        .collect::<Result<Vec<_>>>()?;
    let init = init_weights(&fc, prepared[0].input_dim())?;
    let methods: BTreeSet<Method> = config.methods.iter().copied().collect();
    let mut outcomes = BTreeMap::new();
    for m in methods {
        log::info!("training {m}");
        let out = match m {
            Method::Local => run_baseline_local(&prepared, &init, &fc, config.local_epochs, config.seed)?,
            Method::Pooled => run_baseline_pooled(&prepared, &init, &config.rounds, &fc, config.seed)?,
            Method::PaCfl => run_clustered(&prepared, assignment, &init, &config.rounds, &fc, config.seed)?,
        };
        outcomes.insert(m, out);
    }
    Ok(TrainedMethods { prepared, outcomes })
}

/// Scores every method on each client's test split.
pub fn evaluate(
    trained: &TrainedMethods,
    assignment: &BubbleAssignment,
    seed: u64,
) -> Result<ExperimentReport> {
    let ids: Vec<String> = trained.prepared.iter().map(|p| p.client_id.clone()).collect();
    let mut results = Vec::new();
    for (&method, out) in &trained.outcomes {
        let y_pred = trained
            .prepared
            .iter()
            .zip(&out.client_weights)
            .map(|(p, w)| w.as_ref().map(|w| p.predict_test(w)).transpose())
            .collect::<Result<Vec<_>>>()?;
        results.push(MethodPredictions {
            method,
            y_true: trained.prepared.iter().map(|p| p.test_y.clone()).collect(),
            y_pred,
        });
    }
    build_report(&ids, &results, Some(assignment), seed)
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub status: String,
    pub error: Option<StageFailure>,
    pub config: serde_json::Value,
    /// Relative path to SHA-256 hex digest, for every file the run wrote.
    pub files: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

/// Serializes all writes into the output directory and records their hashes.
struct Artifacts {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Artifacts { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }
}

fn file_stem(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}-{clean}")
}

fn at<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage, source: Box::new(e) })
}

#[derive(Serialize)]
struct ReleasedVector<'a> {
    client_id: &'a str,
    values: &'a [f64],
    noisy: bool,
}

fn importance_json(dists: &[ImportanceDistribution]) -> Vec<ReleasedVector<'_>> {
    dists
        .iter()
        .map(|d| ReleasedVector { client_id: &d.client_id, values: &d.values, noisy: d.noisy })
        .collect()
}

fn dbi_trace_csv(assignment: &BubbleAssignment) -> String {
    let mut out = String::from("k,dbi\n");
    for (k, v) in &assignment.dbi_by_k {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn pipeline(config: &ExperimentConfig, out: &mut Artifacts) -> Result<ExperimentReport> {
    let budget = at("config", config.budget())?;
    let data = at("data", load_clients(config))?;
    at("data", check_shared_features(&data.clients))?;
    log::info!("{} clients, {} features", data.clients.len(), data.clients[0].n_features());
    if let Some(sel) = &data.selection {
        at("data", out.json("features.json", sel))?;
    }

    let release = at(
        "importance",
        release_importance(&data.clients, &config.gbt, budget, config.sensitivity_sample, config.seed),
    )?;
    at("importance", out.json("importance/noisy.json", &importance_json(&release.noisy)))?;
    if config.export_clean_importance {
        at("importance", out.json("importance/clean.json", &importance_json(&release.clean)))?;
    }

    let (_, assignment) =
        at("clustering", cluster_clients(&release.noisy, &config.clustering, config.k_override))?;
    let ids: Vec<String> = data.clients.iter().map(|c| c.client_id.clone()).collect();
    log::info!("k* = {}, bubble sizes {:?}", assignment.k_star, assignment.bubble_sizes());
    at("clustering", out.json("assignment.json", &assignment.export(&ids)))?;
    at("clustering", out.write("dbi_trace.csv", dbi_trace_csv(&assignment).as_bytes()))?;

    let trained = at("federation", train_methods(&data.clients, &assignment, config))?;
    let mut rounds = String::new();
    for o in trained.outcomes.values() {
        for r in &o.log {
            rounds.push_str(&at("federation", serde_json::to_string(r).map_err(Error::from))?);
            rounds.push('\n');
        }
    }
    at("federation", out.write("rounds.jsonl", rounds.as_bytes()))?;
    for (m, o) in &trained.outcomes {
        let dir = format!("weights/{m}");
        let mut models: Vec<(String, &crate::forecaster::ModelWeights)> = Vec::new();
        match m {
            Method::Local => {
                for (i, w) in o.client_weights.iter().enumerate() {
                    if let Some(w) = w {
                        models.push((file_stem(i, &ids[i]), w));
                    }
                }
            }
            _ => {
                for (b, w) in &o.bubble_weights {
                    models.push((format!("bubble-{b:03}"), w));
                }
                if let Some(g) = &o.global {
                    models.push(("global".into(), g));
                }
            }
        }
        for (name, w) in models {
            at("federation", out.write(&format!("{dir}/{name}.bin"), &w.to_le_bytes()))?;
            at("federation", out.write(&format!("{dir}/{name}.layout.json"), &at("federation", w.layout_json())?))?;
        }
        for (client, losses) in &o.loss_curves {
            let i = ids.iter().position(|c| c == client).expect("known client");
            let rel = format!("loss_curves/{m}/{}.csv", file_stem(i, client));
            at("federation", out.write(&rel, loss_curve_csv(losses).as_bytes()))?;
        }
    }

    let mut report = at("evaluation", evaluate(&trained, &assignment, config.seed))?;
    report.config = at("evaluation", serde_json::to_value(config).map_err(Error::from))?;
    at("evaluation", out.write("report.csv", at("evaluation", report.to_csv())?.as_bytes()))?;
    Ok(report)
}

/// Runs the full pipeline and writes every artifact into `config.out_dir`.
///
/// On failure the manifest is still written, listing the files produced so
/// far and the failing stage, and the error is returned as
/// [`Error::Stage`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    at("config", config.validate())?;
    let mut out = at("output", Artifacts::new(&config.out_dir))?;
    let result = pipeline(config, &mut out);
    let elapsed = start.elapsed().as_secs_f64();
    let result = result.and_then(|mut report| {
        report.wall_clock_seconds = elapsed;
        at("output", out.json("report.json", &report))?;
        Ok(report)
    });
    let error = result.as_ref().err().map(|e| match e {
        Error::Stage { stage, source } => StageFailure { stage: stage.to_string(), message: source.to_string() },
        other => StageFailure { stage: "unknown".into(), message: other.to_string() },
    });
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        status: if error.is_some() { "failed" } else { "ok" }.to_string(),
        error,
        config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        files: out.files.clone(),
        wall_clock_seconds: elapsed,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    bytes.push(b'\n');
    let path = config.out_dir.join("manifest.json");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    result
}
