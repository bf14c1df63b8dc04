//! Gradient-boosted regression trees used as each client's clustering
//! signature: gain-based feature importance and its leave-one-out local
//! sensitivity.

mod tree;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use tree::{Node, Tree};
use tree::{Presorted, TreeBuilder};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Shrinkage applied to every tree's output.
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig { n_trees: 50, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 5, seed: 0 }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::config("gbt.n_trees", "must be at least 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::config("gbt.max_depth", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("gbt.learning_rate", "must be in (0,1]"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::config("gbt.min_samples_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.predict_row(r.as_slice().expect("standard layout")))
            .collect()
    }

    /// True when no split was ever made (e.g. constant target); the
    /// importance vector is then all zeros.
    pub fn is_degenerate(&self) -> bool {
        self.trees.iter().all(Tree::is_stump_leaf)
    }
}

/// Fits `mean(y) + shrinkage · Σ trees`, each tree fit to the current
/// residuals under squared error.
pub fn train_gbt(x: ArrayView2<f64>, y: &[f64], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: y.len() });
    }
    if n < 2 * config.min_samples_leaf {
        return Err(Error::invalid(format!(
            "{n} samples, need at least {}",
            2 * config.min_samples_leaf
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    let x = x.as_standard_layout();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut model = GbtModel {
        base,
        learning_rate: config.learning_rate,
        trees: Vec::new(),
        n_features: x.ncols(),
    };
    if y.iter().all(|v| *v == y[0]) {
        return Ok(model);
    }
    let sorted = Presorted::new(x.view());
    let mut pred = vec![base; n];
    let mut residual = vec![0.0; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let tree =
            TreeBuilder::new(x.view(), &sorted, config.max_depth, config.min_samples_leaf)
                .fit(&residual);
        let stump = tree.is_stump_leaf();
        for (i, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict_row(x.row(i).as_slice().unwrap());
        }
        model.trees.push(tree);
        if stump {
            // nothing left to split; further trees would be identical leaves
            break;
        }
    }
    Ok(model)
}

/// Raw gain importance: for every feature, the summed squared-error reduction
/// of all splits on it.
pub fn feature_importance(model: &GbtModel) -> Vec<f64> {
    let mut imp = vec![0.0; model.n_features];
    for tree in &model.trees {
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                imp[*feature] += gain;
            }
        }
    }
    imp
}

/// A client's feature-importance vector on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDistribution {
    pub client_id: String,
    pub values: Vec<f64>,
    pub noisy: bool,
    /// Set when the input summed to zero and the uniform distribution was
    /// substituted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl ImportanceDistribution {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Clips negatives to zero and rescales to sum one; an all-zero (or empty
/// after clipping) vector becomes uniform and is flagged.
pub fn normalize(client_id: &str, raw: &[f64], noisy: bool) -> ImportanceDistribution {
    let clipped: Vec<f64> =
        raw.iter().map(|v| if v.is_finite() && *v > 0.0 { *v } else { 0.0 }).collect();
    let total: f64 = clipped.iter().sum();
    let (values, degenerate) = if total > 0.0 && total.is_finite() {
        (clipped.iter().map(|v| v / total).collect(), false)
    } else {
        let n = raw.len().max(1) as f64;
        (vec![1.0 / n; raw.len()], true)
    };
    ImportanceDistribution { client_id: client_id.to_string(), values, noisy, degenerate }
}

/// Normalized importance of a model trained on `(x, y)`.
pub fn importance_distribution(
    client_id: &str,
    x: ArrayView2<f64>,
    y: &[f64],
    config: &GbtConfig,
) -> Result<ImportanceDistribution> {
    let model = train_gbt(x, y, config)?;
    Ok(normalize(client_id, &feature_importance(&model), false))
}

/// Local sensitivity: the largest absolute change of any normalized
/// importance entry caused by deleting one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub delta: f64,
}

impl Sensitivity {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("sensitivity {delta} must be finite and >= 0")));
        }
        Ok(Sensitivity { delta })
    }
}

/// Default leave-one-out sample size; datasets up to this many rows are
/// evaluated exactly.
pub const DEFAULT_SENSITIVITY_SAMPLE: usize = 2000;

/// Leave-one-out local sensitivity of the normalized importance vector.
///
/// With `sample = None`, or `Some(s)` with `s >= n`, every row is left out in
/// turn (exact mode). Otherwise `s` rows chosen with `config.seed` are left
/// out and the result is a lower bound of the exact value.
///
/// Rows are first put in a canonical order so the result depends only on the
/// multiset of rows.
pub fn local_sensitivity(
    x: ArrayView2<f64>,
    y: &[f64],
    config: &GbtConfig,
    sample_size: Option<usize>,
) -> Result<Sensitivity> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: y.len() });
    }
    if n < 2 || n - 1 < 2 * config.min_samples_leaf {
        return Err(Error::invalid(format!(
            "{n} samples are too few to retrain after removing one"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    let xs: Array2<f64> = x.select(Axis(0), &order);
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let full = importance_distribution("", xs.view(), &ys, config)?;

    let mut leave_out: Vec<usize> = match sample_size {
        Some(s) if s < n => {
            let mut rng = seed::rng(seed::derive(config.seed, "sensitivity", ""));
            sample(&mut rng, n, s).into_vec()
        }
        _ => (0..n).collect(),
    };
    leave_out.sort_unstable();

    let same_row = |a: usize, b: usize| xs.row(a) == xs.row(b) && ys[a] == ys[b];
    let mut delta: f64 = 0.0;
    let mut prev: Option<usize> = None;
    let mut keep: Vec<usize> = Vec::with_capacity(n - 1);
    for &r in &leave_out {
        // rows equal to the previous left-out row give the same reduced set
        if prev.is_some_and(|p| same_row(p, r)) {
            continue;
        }
        prev = Some(r);
        keep.clear();
        keep.extend((0..n).filter(|&i| i != r));
        let xr = xs.select(Axis(0), &keep);
        let yr: Vec<f64> = keep.iter().map(|&i| ys[i]).collect();
        let reduced = importance_distribution("", xr.view(), &yr, config)?;
        for (a, b) in full.values.iter().zip(&reduced.values) {
            delta = delta.max((a - b).abs());
        }
    }
    Sensitivity::new(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
    }

    fn std_dev(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn fits_single_feature_target() {
        let x = gaussian(200, 3, 1);
        let y: Vec<f64> = x.column(0).to_vec();
        let model = train_gbt(x.view(), &y, &GbtConfig::default()).unwrap();
        let pred = model.predict(x.view());
        let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
            / y.len() as f64)
            .sqrt();
        assert!(rmse < 0.05 * std_dev(&y), "rmse {rmse} std {}", std_dev(&y));
        assert!(model.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn constant_target_gives_mean_and_zero_importance() {
        let x = gaussian(40, 2, 2);
        let y = vec![3.5; 40];
        let model = train_gbt(x.view(), &y, &GbtConfig::default()).unwrap();
        assert!(model.trees.is_empty());
        assert!(model.is_degenerate());
        assert!(model.predict(x.view()).iter().all(|p| *p == 3.5));
        assert_eq!(feature_importance(&model), vec![0.0, 0.0]);
    }

    #[test]
    fn training_is_deterministic() {
        let x = gaussian(80, 4, 3);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[1] - 2.0 * r[3]).collect();
        let cfg = GbtConfig::default();
        assert_eq!(
            train_gbt(x.view(), &y, &cfg).unwrap(),
            train_gbt(x.view(), &y, &cfg).unwrap()
        );
    }

    #[test]
    fn importance_concentrates_on_the_driving_feature() {
        let x = gaussian(200, 4, 4);
        let y: Vec<f64> = x.column(0).to_vec();
        let dist = importance_distribution("c", x.view(), &y, &GbtConfig::default()).unwrap();
        assert!(dist.values[0] >= 0.95, "{:?}", dist.values);
    }

    #[test]
    fn importance_follows_column_permutation() {
        let x = gaussian(120, 3, 5);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] + 0.5 * r[2]).collect();
        let perm = [2, 0, 1];
        let xp = x.select(Axis(1), &perm);
        let cfg = GbtConfig::default();
        let a = feature_importance(&train_gbt(x.view(), &y, &cfg).unwrap());
        let b = feature_importance(&train_gbt(xp.view(), &y, &cfg).unwrap());
        for (k, &p) in perm.iter().enumerate() {
            approx::assert_relative_eq!(b[k], a[p], max_relative = 1e-9);
        }
    }

    #[test]
    fn every_split_has_positive_gain() {
        let x = gaussian(150, 5, 6);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[1] + r[4]).collect();
        let model = train_gbt(x.view(), &y, &GbtConfig::default()).unwrap();
        for t in &model.trees {
            for node in &t.nodes {
                if let Node::Split { gain, .. } = node {
                    assert!(*gain > 0.0);
                }
            }
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("a", &[2.0, 2.0, 4.0], false).values, vec![0.25, 0.25, 0.5]);
        assert_eq!(normalize("a", &[-1.0, 1.0], true).values, vec![0.0, 1.0]);
        let u = normalize("a", &[0.0, 0.0, 0.0], false);
        assert_eq!(u.values, vec![1.0 / 3.0; 3]);
        assert!(u.degenerate);
    }

    #[test]
    fn sensitivity_of_identical_rows_is_zero() {
        let x = Array2::from_shape_fn((30, 3), |(_, j)| j as f64);
        let y = vec![1.0; 30];
        let s = local_sensitivity(x.view(), &y, &GbtConfig::default(), None).unwrap();
        assert_eq!(s.delta, 0.0);
    }

    #[test]
    fn sensitivity_is_row_order_invariant() {
        let x = gaussian(40, 3, 7);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] - r[1]).collect();
        let cfg = GbtConfig { n_trees: 10, ..Default::default() };
        let a = local_sensitivity(x.view(), &y, &cfg, None).unwrap();
        let rev: Vec<usize> = (0..40).rev().collect();
        let xr = x.select(Axis(0), &rev);
        let yr: Vec<f64> = rev.iter().map(|&i| y[i]).collect();
        let b = local_sensitivity(xr.view(), &yr, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert!(a.delta > 0.0);
    }

    #[test]
    fn sensitivity_rejects_tiny_datasets() {
        let x = array![[1.0], [2.0], [3.0]];
        assert!(local_sensitivity(x.view(), &[1.0, 2.0, 3.0], &GbtConfig::default(), None)
            .is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GbtConfig { n_trees: 0, ..Default::default() }.validate().is_err());
        assert!(GbtConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(GbtConfig { max_depth: 0, ..Default::default() }.validate().is_err());
    }
}
