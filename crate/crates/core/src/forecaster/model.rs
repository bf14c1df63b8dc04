use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{attention, attention_backward};
use super::weights::{LayerOffsets, ModelWeights};
use super::ForecasterConfig;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Attention weights of one forward pass, indexed `[layer][sample][head]`,
/// each a `T × T` matrix with rows on the simplex.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Vec<Array2<f64>>>>,
}

fn mat(w: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &w[off..off + r * c]).expect("layout")
}

fn vec1(w: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&w[off..off + n])
}

fn add_into(g: &mut [f64], off: usize, src: impl IntoIterator<Item = f64>) {
    for (dst, v) in g[off..].iter_mut().zip(src) {
        *dst += v;
    }
}

fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = x.dot(&w);
    out += &b;
    out
}

/// Sinusoidal position code added to every token when sequences are longer
/// than one step.
pub fn positional_encoding(t: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| (v - mean) * s);
    }
    let mut y = &xhat * &gamma;
    y += &beta;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let inv = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = inv * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

struct LayerCache {
    hin: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Indexed `sample * heads + head`.
    alpha: Vec<Array2<f64>>,
    z: Array2<f64>,
    mask1: Option<Array2<f64>>,
    x1: Array2<f64>,
    ln1: LnCache,
    f1: Array2<f64>,
    g: Array2<f64>,
    mask2: Option<Array2<f64>>,
    ln2: LnCache,
}

pub(crate) struct Cache {
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    last: Array2<f64>,
    batch: usize,
    steps: usize,
}

fn check_finite(a: &Array2<f64>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

/// Forward pass over a `B × T × input_dim` batch. Dropout is applied to the
/// attention and feed-forward outputs when `dropout` is given.
///
/// Non-finite activations are reported with a layer index: 0 is the
/// embedding, `l + 1` encoder layer `l`, `n_layers + 1` the head.
pub(crate) fn forward_cached(
    weights: &ModelWeights,
    x: ArrayView3<f64>,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(Vec<f64>, Cache)> {
    let layout = &weights.layout;
    let (b, t, input_dim) = x.dim();
    if input_dim != layout.input_dim {
        return Err(Error::LengthMismatch { expected: layout.input_dim, actual: input_dim });
    }
    if b == 0 || t == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let w = weights.values.as_slice();
    let off = layout.offsets();
    let d = layout.model_dim;
    let heads = layout.n_heads;
    let dh = d / heads;
    let ff = layout.ff_dim;
    let n = b * t;

    let x2 = x.to_shape((n, input_dim)).expect("contiguous batch").to_owned();
    let mut h = affine(&x2, mat(w, off.embed_w, input_dim, d), vec1(w, off.embed_b, d));
    if t > 1 {
        let pe = positional_encoding(t, d);
        for (r, mut row) in h.axis_iter_mut(Axis(0)).enumerate() {
            row += &pe.row(r % t);
        }
    }
    check_finite(&h, 0)?;

    let mut caches = Vec::with_capacity(layout.n_layers);
    for (li, lo) in off.layers.iter().enumerate() {
        let lo: &LayerOffsets = lo;
        let q = affine(&h, mat(w, lo.wq, d, d), vec1(w, lo.bq, d));
        let k = affine(&h, mat(w, lo.wk, d, d), vec1(w, lo.bk, d));
        let v = affine(&h, mat(w, lo.wv, d, d), vec1(w, lo.bv, d));
        let mut z = Array2::zeros((n, d));
        let mut alpha = Vec::with_capacity(b * heads);
        if t == 1 {
            // one token: every α is [1] and the head output is its value
            z.assign(&v);
            alpha.resize(b * heads, Array2::ones((1, 1)));
        } else {
            for si in 0..b {
                let rows = si * t..(si + 1) * t;
                for hi in 0..heads {
                    let cols = hi * dh..(hi + 1) * dh;
                    let (zh, a) = attention(
                        q.slice(s![rows.clone(), cols.clone()]),
                        k.slice(s![rows.clone(), cols.clone()]),
                        v.slice(s![rows.clone(), cols.clone()]),
                    );
                    z.slice_mut(s![rows.clone(), cols]).assign(&zh);
                    alpha.push(a);
                }
            }
        }
        let mut o = affine(&z, mat(w, lo.wo, d, d), vec1(w, lo.bo, d));
        let mask1 = dropout.as_mut().map(|(p, rng)| dropout_mask((n, d), *p, rng));
        if let Some(m) = &mask1 {
            o *= m;
        }
        let r1 = &h + &o;
        let (x1, ln1) = layer_norm(&r1, vec1(w, lo.ln1_g, d), vec1(w, lo.ln1_b, d));
        let f1 = affine(&x1, mat(w, lo.w1, d, ff), vec1(w, lo.b1, ff));
        let g = f1.mapv(|v| v.max(0.0));
        let mut f2 = affine(&g, mat(w, lo.w2, ff, d), vec1(w, lo.b2, d));
        let mask2 = dropout.as_mut().map(|(p, rng)| dropout_mask((n, d), *p, rng));
        if let Some(m) = &mask2 {
            f2 *= m;
        }
        let r2 = &x1 + &f2;
        let (hout, ln2) = layer_norm(&r2, vec1(w, lo.ln2_g, d), vec1(w, lo.ln2_b, d));
        check_finite(&hout, li + 1)?;
        caches.push(LayerCache {
            hin: std::mem::replace(&mut h, hout),
            q,
            k,
            v,
            alpha,
            z,
            mask1,
            x1,
            ln1,
            f1,
            g,
            mask2,
            ln2,
        });
    }

    let last_rows: Vec<usize> = (0..b).map(|i| i * t + t - 1).collect();
    let last = h.select(Axis(0), &last_rows);
    let head_w = vec1(w, off.head_w, d);
    let head_b = w[off.head_b];
    let pred: Vec<f64> = last.rows().into_iter().map(|r| r.dot(&head_w) + head_b).collect();
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite { layer: layout.n_layers + 1 });
    }
    Ok((pred, Cache { x: x2, layers: caches, last, batch: b, steps: t }))
}

/// Gradient of the loss with respect to every weight, given `dpred`, the
/// loss derivative for each prediction.
pub(crate) fn backward(weights: &ModelWeights, cache: &Cache, dpred: &[f64]) -> Vec<f64> {
    let layout = &weights.layout;
    let w = weights.values.as_slice();
    let off = layout.offsets();
    let d = layout.model_dim;
    let heads = layout.n_heads;
    let dh = d / heads;
    let ff = layout.ff_dim;
    let (b, t) = (cache.batch, cache.steps);
    let n = b * t;
    let mut grad = vec![0.0; off.total];

    let dp = ArrayView1::from(dpred);
    add_into(&mut grad, off.head_w, cache.last.t().dot(&dp));
    grad[off.head_b] += dp.sum();
    let head_w = vec1(w, off.head_w, d);
    let mut dh_out = Array2::zeros((n, d));
    for (i, g) in dpred.iter().enumerate() {
        dh_out.row_mut(i * t + t - 1).scaled_add(*g, &head_w);
    }

    for (lc, lo) in cache.layers.iter().zip(&off.layers).rev() {
        let (dr2, dg2, db2) = layer_norm_backward(&dh_out, &lc.ln2, vec1(w, lo.ln2_g, d));
        add_into(&mut grad, lo.ln2_g, dg2);
        add_into(&mut grad, lo.ln2_b, db2);

        let mut dx1 = dr2.clone();
        let mut df2 = dr2;
        if let Some(m) = &lc.mask2 {
            df2 *= m;
        }
        add_into(&mut grad, lo.w2, lc.g.t().dot(&df2));
        add_into(&mut grad, lo.b2, df2.sum_axis(Axis(0)));
        let mut df1 = df2.dot(&mat(w, lo.w2, ff, d).t());
        df1.zip_mut_with(&lc.f1, |g, &f| {
            if f <= 0.0 {
                *g = 0.0;
            }
        });
        add_into(&mut grad, lo.w1, lc.x1.t().dot(&df1));
        add_into(&mut grad, lo.b1, df1.sum_axis(Axis(0)));
        dx1 += &df1.dot(&mat(w, lo.w1, d, ff).t());

        let (dr1, dg1, db1) = layer_norm_backward(&dx1, &lc.ln1, vec1(w, lo.ln1_g, d));
        add_into(&mut grad, lo.ln1_g, dg1);
        add_into(&mut grad, lo.ln1_b, db1);

        let mut dhin = dr1.clone();
        let mut do_ = dr1;
        if let Some(m) = &lc.mask1 {
            do_ *= m;
        }
        add_into(&mut grad, lo.wo, lc.z.t().dot(&do_));
        add_into(&mut grad, lo.bo, do_.sum_axis(Axis(0)));
        let dz = do_.dot(&mat(w, lo.wo, d, d).t());

        let (dq, dk, dv) = if t == 1 {
            (Array2::zeros((n, d)), Array2::zeros((n, d)), dz)
        } else {
            let mut dq = Array2::zeros((n, d));
            let mut dk = Array2::zeros((n, d));
            let mut dv = Array2::zeros((n, d));
            for si in 0..b {
                let rows = si * t..(si + 1) * t;
                for hi in 0..heads {
                    let cols = hi * dh..(hi + 1) * dh;
                    let sl = s![rows.clone(), cols.clone()];
                    let (gq, gk, gv) = attention_backward(
                        lc.q.slice(sl),
                        lc.k.slice(sl),
                        lc.v.slice(sl),
                        &lc.alpha[si * heads + hi],
                        dz.slice(sl),
                    );
                    dq.slice_mut(sl).assign(&gq);
                    dk.slice_mut(sl).assign(&gk);
                    dv.slice_mut(sl).assign(&gv);
                }
            }
            (dq, dk, dv)
        };
        for (dmat, wo, bo) in [(&dq, lo.wq, lo.bq), (&dk, lo.wk, lo.bk), (&dv, lo.wv, lo.bv)] {
            add_into(&mut grad, wo, lc.hin.t().dot(dmat));
            add_into(&mut grad, bo, dmat.sum_axis(Axis(0)));
            dhin += &dmat.dot(&mat(w, wo, d, d).t());
        }
        dh_out = dhin;
    }

    add_into(&mut grad, off.embed_w, cache.x.t().dot(&dh_out));
    add_into(&mut grad, off.embed_b, dh_out.sum_axis(Axis(0)));
    grad
}

/// Forward pass returning one prediction per sample and the attention
/// weights. Dropout is active only in [`Mode::Train`] and draws from `rng`.
pub fn forward(
    weights: &ModelWeights,
    x: ArrayView3<f64>,
    config: &ForecasterConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let dropout = (mode == Mode::Train && config.dropout_rate > 0.0)
        .then_some((config.dropout_rate, rng));
    let (pred, cache) = forward_cached(weights, x, dropout)?;
    let heads = weights.layout.n_heads;
    let trace = AttentionTrace {
        layers: cache
            .layers
            .iter()
            .map(|lc| lc.alpha.chunks(heads).map(<[Array2<f64>]>::to_vec).collect())
            .collect(),
    };
    Ok((pred, trace))
}

/// Eval-mode predictions.
pub fn predict(weights: &ModelWeights, x: ArrayView3<f64>) -> Result<Vec<f64>> {
    Ok(forward_cached(weights, x, None)?.0)
}

fn mse_and_dpred(pred: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let m = pred.len() as f64;
    let loss = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / m;
    let dpred = pred.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / m).collect();
    (loss, dpred)
}

/// Batch mean squared error and its exact gradient, dropout disabled.
pub fn loss_and_gradient(
    weights: &ModelWeights,
    x: ArrayView3<f64>,
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if y.len() != x.dim().0 {
        return Err(Error::LengthMismatch { expected: x.dim().0, actual: y.len() });
    }
    let (pred, cache) = forward_cached(weights, x, None)?;
    let (loss, dpred) = mse_and_dpred(&pred, y);
    Ok((loss, backward(weights, &cache, &dpred)))
}

/// Exact gradient of the batch MSE with respect to the flat weights.
pub fn gradient(weights: &ModelWeights, x: ArrayView3<f64>, y: &[f64]) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(weights, x, y)?.1)
}

/// Training-mode loss and gradient with dropout masks drawn from `rng`.
pub(crate) fn train_loss_and_gradient(
    weights: &ModelWeights,
    x: ArrayView3<f64>,
    y: &[f64],
    dropout_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let dropout = (dropout_rate > 0.0).then_some((dropout_rate, rng));
    let (pred, cache) = forward_cached(weights, x, dropout)?;
    let (loss, dpred) = mse_and_dpred(&pred, y);
    Ok((loss, backward(weights, &cache, &dpred)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::{array, Array1};

    #[test]
    fn positional_encoding_first_row_and_range() {
        let pe = positional_encoding(5, 6);
        for i in 0..6 {
            assert_eq!(pe[[0, i]], if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
        assert!((pe[[3, 0]] - 3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let ones = Array1::ones(4);
        let zeros = Array1::zeros(4);
        let (y, _) = layer_norm(&x, ones.view(), zeros.view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = array![[0.3, -1.2, 2.0], [1.0, 0.5, -0.7]];
        let gamma = array![1.5, -0.5, 0.8];
        let beta = array![0.1, 0.0, -0.2];
        let dy = array![[0.2, -0.4, 1.0], [0.7, 0.1, -0.3]];
        let objective = |x: &Array2<f64>| (&layer_norm(x, gamma.view(), beta.view()).0 * &dy).sum();
        let (_, cache) = layer_norm(&x, gamma.view(), beta.view());
        let (dx, dgamma, dbeta) = layer_norm_backward(&dy, &cache, gamma.view());
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[[i, j]] += h;
                down[[i, j]] -= h;
                let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
                assert!((numeric - dx[[i, j]]).abs() < 1e-7);
            }
        }
        assert_eq!(dbeta, dy.sum_axis(Axis(0)));
        assert_eq!(dgamma, (&dy * &cache.xhat).sum_axis(Axis(0)));
    }

    #[test]
    fn dropout_mask_is_inverted_and_unbiased() {
        let mut rng = seed::rng(3);
        assert!(dropout_mask((4, 4), 0.0, &mut rng).iter().all(|v| *v == 1.0));
        let m = dropout_mask((200, 50), 0.5, &mut rng);
        assert!(m.iter().all(|v| *v == 0.0 || *v == 2.0));
        assert!((m.mean().unwrap() - 1.0).abs() < 0.05);
    }
}
