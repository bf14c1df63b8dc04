use serde::{Deserialize, Serialize};

use crate::boosting::ImportanceDistribution;
use crate::error::{Error, Result};

/// Symmetric, zero-diagonal matrix of pairwise client distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from a row-major `n × n` buffer, checking symmetry,
    /// a zero diagonal and finite non-negative entries.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::LengthMismatch { expected: n * n, actual: d.len() });
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::invalid("distance matrix diagonal must be zero"));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid("distances must be finite and non-negative"));
                }
                if v != d[j * n + i] {
                    return Err(Error::invalid("distance matrix must be symmetric"));
                }
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Fills the upper triangle from `f(i, j)` for `i < j` and mirrors it.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j)?;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self::new(n, d)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Same distances with clients reordered: entry `(i, j)` of the result is
    /// entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DistanceMatrix {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// One-dimensional earth mover's distance over feature positions.
    #[default]
    Emd,
    /// `1 − cos(p, q)`.
    Cosine,
}

/// Earth mover's distance between two histograms on the points
/// `0, 1, …, len−1`: the L1 distance between their CDFs.
pub fn emd_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), actual: q.len() });
    }
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    // the final CDF difference is zero for equal total mass; it is not a bin gap
    for k in 0..p.len().saturating_sub(1) {
        cp += p[k];
        cq += q[k];
        total += (cp - cq).abs();
    }
    Ok(total)
}

pub fn emd(p: &ImportanceDistribution, q: &ImportanceDistribution) -> Result<f64> {
    emd_slices(&p.values, &q.values)
}

pub fn cosine_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), actual: q.len() });
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (np * nq)).max(0.0))
}

/// All pairwise distances between client distributions.
pub fn pairwise_distances(
    dists: &[ImportanceDistribution],
    metric: Metric,
) -> Result<DistanceMatrix> {
    if dists.len() < 2 {
        return Err(Error::invalid("need at least two clients"));
    }
    DistanceMatrix::from_fn(dists.len(), |i, j| {
        let (p, q) = (&dists[i].values, &dists[j].values);
        match metric {
            Metric::Emd => emd_slices(p, q),
            Metric::Cosine => cosine_distance(p, q),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::normalize;
    use proptest::prelude::*;

    #[test]
    fn emd_examples() {
        assert_eq!(emd_slices(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        assert_eq!(emd_slices(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(emd_slices(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]).unwrap(), 1.0);
        assert!(matches!(
            emd_slices(&[1.0], &[0.5, 0.5]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pairwise_examples() {
        let a = normalize("a", &[1.0, 2.0, 3.0], false);
        let b = normalize("b", &[3.0, 1.0, 1.0], false);
        let dm = pairwise_distances(&[a.clone(), a.clone()], Metric::Emd).unwrap();
        assert_eq!(dm.rows(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let dm = pairwise_distances(&[a.clone(), b, a], Metric::Emd).unwrap();
        assert_eq!(dm.get(0, 2), 0.0);
        assert_eq!(dm.get(0, 1), dm.get(1, 2));
        assert!(pairwise_distances(&[normalize("x", &[1.0], false)], Metric::Emd).is_err());
    }

    #[test]
    fn cosine_of_parallel_vectors_is_zero() {
        assert!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]).unwrap() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_validation() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, f64::NAN, f64::NAN, 0.0]).is_err());
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_map(|v| normalize("", &v, false).values)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn emd_is_a_metric(
            (a, b, c) in (2usize..10).prop_flat_map(|n| (simplex(n), simplex(n), simplex(n)))
        ) {
            let ab = emd_slices(&a, &b).unwrap();
            let ba = emd_slices(&b, &a).unwrap();
            let bc = emd_slices(&b, &c).unwrap();
            let ac = emd_slices(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(emd_slices(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
