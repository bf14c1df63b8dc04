use ndarray::{Array2, ArrayView1, Axis};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.95;
pub const DEFAULT_P_THRESHOLD: f64 = 0.06;
pub const DEFAULT_TOP_K: usize = 25;

#[derive(Debug, Clone)]
pub struct Pruned {
    pub matrix: Array2<f64>,
    pub names: Vec<String>,
    /// Original indices of the retained columns.
    pub kept: Vec<usize>,
    pub removed: Vec<String>,
    /// Columns with zero variance; Pearson is undefined for them, so they are
    /// kept and reported here.
    pub zero_variance: Vec<String>,
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Drops the later column of every pair with `|r| >= threshold`, scanning in
/// index order and comparing each column only against columns already kept.
pub fn prune_correlated(x: &Array2<f64>, names: &[String], threshold: f64) -> Result<Pruned> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("correlation threshold {threshold} not in (0,1]")));
    }
    if names.len() != x.ncols() {
        return Err(Error::LengthMismatch { expected: x.ncols(), actual: names.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite values"));
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    let mut zero_variance = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let constant = col.iter().all(|v| *v == col[0]);
        if constant {
            zero_variance.push(names[j].clone());
            kept.push(j);
            continue;
        }
        let correlated = kept.iter().any(|&i| {
            pearson(x.column(i), col).is_some_and(|r| r.abs() >= threshold)
        });
        if correlated {
            removed.push(names[j].clone());
        } else {
            kept.push(j);
        }
    }
    Ok(Pruned {
        matrix: x.select(Axis(1), &kept),
        names: kept.iter().map(|&j| names[j].clone()).collect(),
        kept,
        removed,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub index: usize,
    pub f: f64,
    pub p: f64,
}

/// Univariate regression F-test of `y` on each column.
///
/// Returns features with `p <= p_threshold`, sorted by descending F (ties by
/// index). Zero-variance features score `F = 0` and are excluded.
pub fn rank_features_anova(
    x: &Array2<f64>,
    y: &[f64],
    p_threshold: f64,
) -> Result<Vec<FeatureScore>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid(format!("ANOVA needs at least 3 samples, got {n}")));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: y.len() });
    }
    let df2 = (n - 2) as f64;
    let dist = FisherSnedecor::new(1.0, df2).expect("valid degrees of freedom");
    let y = ArrayView1::from(y);
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let (f, p) = match pearson(x.column(j), y) {
            None => (0.0, 1.0),
            Some(r) => {
                let r2 = r * r;
                if r2 >= 1.0 {
                    (f64::INFINITY, 0.0)
                } else {
                    let f = r2 / (1.0 - r2) * df2;
                    (f, dist.sf(f))
                }
            }
        };
        if f > 0.0 && p <= p_threshold {
            out.push(FeatureScore { index: j, f, p });
        }
    }
    out.sort_by(|a, b| b.f.total_cmp(&a.f).then(a.index.cmp(&b.index)));
    Ok(out)
}
