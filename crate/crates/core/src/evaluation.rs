//! Per-client error metrics and the method comparison report.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{AssignmentExport, BubbleAssignment};
use crate::error::{Error, Result};

/// A training method compared in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Local,
    Pooled,
    PaCfl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Local, Method::Pooled, Method::PaCfl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::Pooled => "pooled",
            Method::PaCfl => "pa_cfl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "local" => Ok(Method::Local),
            "pooled" => Ok(Method::Pooled),
            "pa_cfl" => Ok(Method::PaCfl),
            other => Err(Error::invalid(format!("unknown method `{other}` (local, pooled, pa_cfl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the true values are constant.
    pub r2: Option<f64>,
}

/// RMSE, MAE and R² of `y_pred` against `y_true`.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricTriple> {
    if y_true.is_empty() {
        return Err(Error::EmptyData("no values to score".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch { expected: y_true.len(), actual: y_pred.len() });
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in metrics input"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let (mut ss_res, mut abs, mut ss_tot) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let r = t - p;
        ss_res += r * r;
        abs += r.abs();
        ss_tot += (t - mean) * (t - mean);
    }
    let constant = y_true.iter().all(|v| *v == y_true[0]);
    Ok(MetricTriple {
        rmse: (ss_res / n).sqrt(),
        mae: abs / n,
        r2: (!constant).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Test-split predictions of one method; `None` marks an excluded client.
#[derive(Debug, Clone)]
pub struct MethodPredictions {
    pub method: Method,
    pub y_true: Vec<Vec<f64>>,
    pub y_pred: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub client_id: String,
    pub bubble: Option<usize>,
    pub excluded: bool,
    /// `None` for a method that did not serve this client.
    pub results: BTreeMap<Method, Option<MetricTriple>>,
}

/// Client means of one method and its change against local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub clients: usize,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub mean_r2: Option<f64>,
    /// Percent reduction of mean RMSE against local, over the clients both
    /// methods served.
    pub rmse_reduction_pct: Option<f64>,
    pub mae_reduction_pct: Option<f64>,
    /// Mean R² minus the local mean R² over the shared clients.
    pub r2_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub methods: Vec<Method>,
    pub clients: Vec<ClientRow>,
    pub summary: Vec<MethodSummary>,
    pub assignment: Option<AssignmentExport>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub wall_clock_seconds: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(method: Method, clients: &[ClientRow], has_local: bool) -> MethodSummary {
    let own: Vec<MetricTriple> = clients.iter().filter_map(|c| c.results[&method]).collect();
    let paired: Vec<(MetricTriple, MetricTriple)> = if has_local {
        clients
            .iter()
            .filter_map(|c| Some((c.results[&method]?, c.results[&Method::Local]?)))
            .collect()
    } else {
        Vec::new()
    };
    let reduction = |f: fn(&MetricTriple) -> f64| {
        let m = mean(paired.iter().map(|(a, _)| f(a)))?;
        let l = mean(paired.iter().map(|(_, b)| f(b)))?;
        (l > 0.0).then(|| (l - m) / l * 100.0)
    };
    let r2_pairs: Vec<(f64, f64)> =
        paired.iter().filter_map(|(a, b)| Some((a.r2?, b.r2?))).collect();
    MethodSummary {
        method,
        clients: own.len(),
        mean_rmse: mean(own.iter().map(|m| m.rmse)).unwrap_or(f64::NAN),
        mean_mae: mean(own.iter().map(|m| m.mae)).unwrap_or(f64::NAN),
        mean_r2: mean(own.iter().filter_map(|m| m.r2)),
        rmse_reduction_pct: reduction(|m| m.rmse),
        mae_reduction_pct: reduction(|m| m.mae),
        r2_improvement: mean(r2_pairs.iter().map(|(a, b)| a - b)),
    }
}

/// Assembles the per-client table and method summaries.
///
/// Every method must have been scored on the same test targets for each
/// client; any difference is reported as [`Error::SplitMismatch`].
pub fn build_report(
    client_ids: &[String],
    results: &[MethodPredictions],
    assignment: Option<&BubbleAssignment>,
    seed: u64,
) -> Result<ExperimentReport> {
    let n = client_ids.len();
    if let Some(a) = assignment {
        if a.labels.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: a.labels.len() });
        }
    }
    for r in results {
        if r.y_true.len() != n || r.y_pred.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: r.y_true.len().min(r.y_pred.len()) });
        }
    }
    if let Some(first) = results.first() {
        for r in &results[1..] {
            for (i, (a, b)) in first.y_true.iter().zip(&r.y_true).enumerate() {
                if a != b {
                    return Err(Error::SplitMismatch(format!(
                        "client `{}`: {} and {} were scored on different test targets",
                        client_ids[i], first.method, r.method
                    )));
                }
            }
        }
    }
    let mut methods: Vec<Method> = results.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    if methods.len() != results.len() {
        return Err(Error::invalid("a method appears twice"));
    }
    let mut clients = Vec::with_capacity(n);
    for (i, id) in client_ids.iter().enumerate() {
        let mut row = BTreeMap::new();
        for r in results {
            let cell = match &r.y_pred[i] {
                Some(p) => Some(metrics(&r.y_true[i], p)?),
                None => None,
            };
            row.insert(r.method, cell);
        }
        clients.push(ClientRow {
            client_id: id.clone(),
            bubble: assignment.map(|a| a.labels[i]),
            excluded: assignment.is_some_and(|a| a.singleton_flags[i]),
            results: row,
        });
    }
    let has_local = methods.contains(&Method::Local);
    let summary = methods.iter().map(|&m| summarize(m, &clients, has_local)).collect();
    Ok(ExperimentReport {
        seed,
        methods,
        clients,
        summary,
        assignment: assignment.map(|a| a.export(client_ids)),
        config: serde_json::Value::Null,
        wall_clock_seconds: 0.0,
    })
}

const EXCLUDED: &str = "-";

fn r2_cell(r2: Option<f64>) -> String {
    match r2 {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "undefined".into(),
    }
}

impl ExperimentReport {
    /// One row per client and method: `client,method,rmse,mae,r2`, with R²
    /// as a percentage and `-` in every cell of a method that excluded the
    /// client.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["client", "method", "rmse", "mae", "r2"])?;
        for c in &self.clients {
            for m in &self.methods {
                let cells = match c.results.get(m).copied().flatten() {
                    Some(t) => [format!("{:.6}", t.rmse), format!("{:.6}", t.mae), r2_cell(t.r2)],
                    None => [EXCLUDED.into(), EXCLUDED.into(), EXCLUDED.into()],
                };
                w.write_record([c.client_id.as_str(), m.as_str(), &cells[0], &cells[1], &cells[2]])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Metrics of `method` for the client with id `client`.
    pub fn get(&self, client: &str, method: Method) -> Option<MetricTriple> {
        self.clients.iter().find(|c| c.client_id == client)?.results.get(&method).copied().flatten()
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

/// Mean of one client and method over several seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMean {
    pub client_id: String,
    pub method: Method,
    pub runs: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
}

/// Averages every (client, method) cell across reports, skipping runs in
/// which that client was excluded.
pub fn mean_over_seeds(reports: &[ExperimentReport]) -> Vec<SeedMean> {
    let mut cells: BTreeMap<(String, Method), Vec<MetricTriple>> = BTreeMap::new();
    for r in reports {
        for c in &r.clients {
            for (m, t) in &c.results {
                let e = cells.entry((c.client_id.clone(), *m)).or_default();
                if let Some(t) = t {
                    e.push(*t);
                }
            }
        }
    }
    cells
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((client_id, method), v)| SeedMean {
            client_id,
            method,
            runs: v.len(),
            rmse: mean(v.iter().map(|t| t.rmse)).expect("nonempty"),
            mae: mean(v.iter().map(|t| t.mae)).expect("nonempty"),
            r2: mean(v.iter().filter_map(|t| t.r2)),
        })
        .collect()
}
