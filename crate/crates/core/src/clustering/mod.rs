//! Grouping clients into bubbles from their released importance
//! distributions.
//!
//! Distances between clients are one-dimensional earth mover's distances;
//! clusters are built by average-linkage agglomeration and the number of
//! bubbles is chosen by minimizing the Davies-Bouldin index. A client left
//! alone in its bubble is flagged as a potential attacker.

mod distance;
mod linkage;

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

pub use distance::{cosine_distance, emd, emd_slices, pairwise_distances, DistanceMatrix, Metric};
pub use linkage::{agglomerate, average_linkage, dendrogram, dendrogram_naive, Dendrogram, Merge};

use crate::error::{Error, Result};

/// How the within-cluster scatter `S_i` is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbiVariant {
    /// `S_i = (1/|C_i|) Σ_{x∈C_i} Σ_{y∈C_i} d(x, y)` over ordered pairs.
    #[default]
    AsWritten,
    /// Mean distance over distinct pairs, `Σ_{x≠y} d(x, y) / (|C_i|(|C_i|−1))`.
    Standard,
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn scatter(dm: &DistanceMatrix, members: &[usize], variant: DbiVariant) -> f64 {
    let m = members.len();
    let mut upper = 0.0;
    for (a, &x) in members.iter().enumerate() {
        for &y in &members[a + 1..] {
            upper += dm.get(x, y);
        }
    }
    match variant {
        DbiVariant::AsWritten => 2.0 * upper / m as f64,
        DbiVariant::Standard if m > 1 => 2.0 * upper / (m * (m - 1)) as f64,
        DbiVariant::Standard => 0.0,
    }
}

/// Davies-Bouldin index of a partition, with average linkage as the
/// between-cluster distance.
///
/// Returns `+∞` when two clusters are at zero distance from each other.
pub fn davies_bouldin(dm: &DistanceMatrix, labels: &[usize], variant: DbiVariant) -> Result<f64> {
    if labels.len() != dm.len() {
        return Err(Error::LengthMismatch { expected: dm.len(), actual: labels.len() });
    }
    let clusters = groups(labels);
    if clusters.len() < 2 || clusters.iter().any(Vec::is_empty) {
        return Err(Error::invalid("DBI needs at least two nonempty clusters"));
    }
    let s: Vec<f64> = clusters.iter().map(|c| scatter(dm, c, variant)).collect();
    let k = clusters.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..k).filter(|&j| j != i) {
            let between = average_linkage(dm, &clusters[i], &clusters[j]);
            let ratio = if between > 0.0 { (s[i] + s[j]) / between } else { f64::INFINITY };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Client-to-bubble assignment with the DBI trace that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleAssignment {
    pub k_star: usize,
    pub labels: Vec<usize>,
    pub singleton_flags: Vec<bool>,
    pub dbi_by_k: BTreeMap<usize, f64>,
    /// True when `k_star` came from an override rather than the DBI minimum.
    pub forced: bool,
}

impl BubbleAssignment {
    fn from_labels(labels: Vec<usize>, dbi_by_k: BTreeMap<usize, f64>, forced: bool) -> Self {
        let sizes = groups(&labels).iter().map(Vec::len).collect::<Vec<_>>();
        BubbleAssignment {
            k_star: sizes.len(),
            singleton_flags: labels.iter().map(|&l| sizes[l] == 1).collect(),
            labels,
            dbi_by_k,
            forced,
        }
    }

    /// Members of each bubble, indexed by bubble id.
    pub fn bubbles(&self) -> Vec<Vec<usize>> {
        groups(&self.labels)
    }

    pub fn bubble_sizes(&self) -> Vec<usize> {
        self.bubbles().iter().map(Vec::len).collect()
    }

    /// Applies a client reordering: client `i` of the result is client
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Vec<usize> {
        perm.iter().map(|&p| self.labels[p]).collect()
    }

    /// JSON export keyed by client id.
    pub fn export(&self, client_ids: &[String]) -> AssignmentExport {
        AssignmentExport {
            k_star: self.k_star,
            forced: self.forced,
            labels: client_ids.iter().cloned().zip(self.labels.iter().copied()).collect(),
            singletons: client_ids
                .iter()
                .zip(&self.singleton_flags)
                .filter(|(_, s)| **s)
                .map(|(c, _)| c.clone())
                .collect(),
            dbi_by_k: self
                .dbi_by_k
                .iter()
                .map(|(k, v)| (k.to_string(), v.is_finite().then_some(*v)))
                .collect(),
        }
    }
}

/// Serialized form of a [`BubbleAssignment`]; infinite DBI values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentExport {
    pub k_star: usize,
    pub forced: bool,
    pub labels: BTreeMap<String, usize>,
    pub singletons: Vec<String>,
    pub dbi_by_k: BTreeMap<String, Option<f64>>,
}

fn dbi_trace(
    dm: &DistanceMatrix,
    tree: &Dendrogram,
    ks: RangeInclusive<usize>,
    variant: DbiVariant,
) -> Result<BTreeMap<usize, f64>> {
    ks.map(|k| Ok((k, davies_bouldin(dm, &tree.cut(k)?, variant)?))).collect()
}

/// Scores every `k` in `k_range` and keeps the DBI minimizer (ties go to the
/// smaller `k`).
pub fn select_k(
    dm: &DistanceMatrix,
    k_range: RangeInclusive<usize>,
    variant: DbiVariant,
) -> Result<BubbleAssignment> {
    let n = dm.len();
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    if *k_range.start() < 2 || *k_range.end() > n.saturating_sub(1) {
        return Err(Error::invalid(format!(
            "k range {}..={} must lie within 2..={}",
            k_range.start(),
            k_range.end(),
            n.saturating_sub(1)
        )));
    }
    let tree = dendrogram(dm);
    let trace = dbi_trace(dm, &tree, k_range, variant)?;
    let mut best = None;
    for (&k, &v) in &trace {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    let (k_star, _) = best.expect("nonempty range");
    Ok(BubbleAssignment::from_labels(tree.cut(k_star)?, trace, false))
}

/// Default scan range `2..=n−1`, or `None` when it is empty (`n ≤ 2`).
pub fn default_k_range(n: usize) -> Option<RangeInclusive<usize>> {
    (n >= 3).then(|| 2..=n - 1)
}

/// Bubble assignment for any client count.
///
/// With `k_override`, the dendrogram is cut at that `k` (the DBI trace over
/// the default range is still recorded). Without it, `k` is selected by
/// [`select_k`] over `k_range` or the default range. With two clients and no
/// override both share one bubble; a single client is its own bubble.
pub fn assign_bubbles(
    dm: &DistanceMatrix,
    k_range: Option<RangeInclusive<usize>>,
    k_override: Option<usize>,
    variant: DbiVariant,
) -> Result<BubbleAssignment> {
    let n = dm.len();
    if n == 0 {
        return Err(Error::invalid("no clients to assign"));
    }
    let range = k_range.or_else(|| default_k_range(n));
    if let Some(k) = k_override {
        if k < 1 || k > n {
            return Err(Error::config("k_override", format!("{k} outside 1..={n}")));
        }
        let tree = dendrogram(dm);
        let trace = match range {
            Some(r) => dbi_trace(dm, &tree, r, variant)?,
            None => BTreeMap::new(),
        };
        return Ok(BubbleAssignment::from_labels(tree.cut(k)?, trace, true));
    }
    match range {
        Some(r) => select_k(dm, r, variant),
        None => Ok(BubbleAssignment::from_labels(vec![0; n], BTreeMap::new(), false)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        let n = points.len();
        DistanceMatrix::from_fn(n, |i, j| Ok((points[i] - points[j]).abs())).unwrap()
    }

    #[test]
    fn dbi_hand_example() {
        let dm = line(&[0.0, 1.0, 10.0, 11.0]);
        let dbi = davies_bouldin(&dm, &[0, 0, 1, 1], DbiVariant::AsWritten).unwrap();
        assert!((dbi - 0.2).abs() < 1e-15, "{dbi}");
        // the variants agree on two-member clusters and differ from three up:
        // S = 8/3 as written, 4/3 standard, between = 10
        let dm = line(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let labels = [0, 0, 0, 1, 1, 1];
        let w = davies_bouldin(&dm, &labels, DbiVariant::AsWritten).unwrap();
        let s = davies_bouldin(&dm, &labels, DbiVariant::Standard).unwrap();
        assert!((w - 16.0 / 30.0).abs() < 1e-15);
        assert!((s - 8.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn dbi_of_singletons_is_zero() {
        let dm = line(&[0.0, 3.0]);
        assert_eq!(davies_bouldin(&dm, &[0, 1], DbiVariant::AsWritten).unwrap(), 0.0);
    }

    #[test]
    fn dbi_is_scale_invariant() {
        let dm = line(&[0.0, 0.7, 4.0, 5.5, 9.0]);
        let scaled = line(&[0.0, 2.1, 12.0, 16.5, 27.0]);
        let labels = [0, 0, 1, 1, 2];
        let a = davies_bouldin(&dm, &labels, DbiVariant::AsWritten).unwrap();
        let b = davies_bouldin(&scaled, &labels, DbiVariant::AsWritten).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dbi_zero_between_distance_is_infinite() {
        let dm = line(&[0.0, 0.0, 5.0]);
        let v = davies_bouldin(&dm, &[0, 1, 2], DbiVariant::AsWritten).unwrap();
        assert!(v.is_infinite());
        assert!(davies_bouldin(&dm, &[0, 0, 0], DbiVariant::AsWritten).is_err());
    }

    #[test]
    fn select_k_finds_separated_groups() {
        let dm = line(&[0.0, 0.1, 0.2, 5.0, 5.1, 10.0, 10.2, 10.1]);
        let a = select_k(&dm, 2..=7, DbiVariant::AsWritten).unwrap();
        assert_eq!(a.k_star, 3);
        assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 2, 2, 2]);
        assert!(a.singleton_flags.iter().all(|s| !s));
        assert_eq!(a.dbi_by_k.len(), 6);
    }

    #[test]
    fn singleton_flags_mark_outliers() {
        let dm = line(&[0.0, 0.1, 0.2, 5.0, 5.1, 5.2, 50.0]);
        let a = select_k(&dm, 2..=5, DbiVariant::AsWritten).unwrap();
        assert_eq!(a.k_star, 3);
        assert_eq!(a.singleton_flags, vec![false, false, false, false, false, false, true]);
    }

    #[test]
    fn select_k_range_checks() {
        let dm = line(&[0.0, 1.0, 2.0]);
        assert!(select_k(&dm, 1..=2, DbiVariant::AsWritten).is_err());
        assert!(select_k(&dm, 2..=3, DbiVariant::AsWritten).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(select_k(&dm, empty, DbiVariant::AsWritten).is_err());
    }

    #[test]
    fn assign_handles_small_n_and_overrides() {
        let two = line(&[0.0, 1.0]);
        let a = assign_bubbles(&two, None, None, DbiVariant::AsWritten).unwrap();
        assert_eq!((a.k_star, a.labels.clone()), (1, vec![0, 0]));
        let one = line(&[0.0]);
        let a = assign_bubbles(&one, None, None, DbiVariant::AsWritten).unwrap();
        assert_eq!(a.singleton_flags, vec![true]);

        let dm = line(&[0.0, 0.1, 5.0, 5.1, 9.0, 9.1, 20.0]);
        let a = assign_bubbles(&dm, None, Some(5), DbiVariant::AsWritten).unwrap();
        assert_eq!(a.k_star, 5);
        assert!(a.forced);
        assert_eq!(a.dbi_by_k.len(), 5);
        assert!(assign_bubbles(&dm, None, Some(8), DbiVariant::AsWritten).is_err());
    }

    #[test]
    fn export_uses_client_ids() {
        let dm = line(&[0.0, 0.1, 5.0]);
        let a = select_k(&dm, 2..=2, DbiVariant::AsWritten).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let e = a.export(&ids);
        assert_eq!(e.labels["c"], 1);
        assert_eq!(e.singletons, vec!["c"]);
        assert!(serde_json::to_string(&e).unwrap().contains("\"dbi_by_k\":{\"2\":"));
    }
}
