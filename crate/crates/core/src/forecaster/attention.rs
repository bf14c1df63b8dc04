use ndarray::{Array2, ArrayView2, Axis};

/// Row-wise softmax, shifted by the row max for stability.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Scaled dot-product attention for one head.
///
/// `q` and `k` are `T × d`, `v` is `T × d_v`. Returns the `T × d_v` weighted
/// value sums and the `T × T` attention weights
/// `α = softmax(q kᵀ / √d)`.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    let alpha = softmax_rows(&scores);
    (alpha.dot(&v), alpha)
}

/// Backward pass of [`attention`] given upstream `dz`; returns `(dq, dk, dv)`.
pub(crate) fn attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    alpha: &Array2<f64>,
    dz: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let dv = alpha.t().dot(&dz);
    let dalpha = dz.dot(&v.t());
    let mut ds = &dalpha * alpha;
    for (mut row, a) in ds.axis_iter_mut(Axis(0)).zip(alpha.axis_iter(Axis(0))) {
        // row currently holds dα ⊙ α; subtract α · Σ(dα ⊙ α)
        let s = row.sum();
        row.zip_mut_with(&a, |r, &ai| *r -= ai * s);
    }
    ds *= scale;
    (ds.dot(&k), ds.t().dot(&q), dv)
}
