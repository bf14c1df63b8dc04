#![allow(dead_code)]

use bubblefl::forecaster::{ForecasterConfig, ModelWeights};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum-cost transport between histograms `p` and `q` on the points
/// `0..n` with cost `|i − j|`, solved as a min-cost flow by successive
/// shortest augmenting paths (Bellman-Ford on the residual graph).
pub fn transport_cost(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len();
    assert_eq!(n, q.len());
    let source = 2 * n;
    let sink = 2 * n + 1;
    let nodes = 2 * n + 2;
    // edge list: (to, capacity, cost, index of reverse edge)
    let mut graph: Vec<Vec<(usize, f64, f64, usize)>> = vec![Vec::new(); nodes];
    let add = |g: &mut Vec<Vec<(usize, f64, f64, usize)>>, a: usize, b: usize, cap: f64, cost: f64| {
        let ra = g[b].len();
        let rb = g[a].len();
        g[a].push((b, cap, cost, ra));
        g[b].push((a, 0.0, -cost, rb));
    };
    for i in 0..n {
        add(&mut graph, source, i, p[i], 0.0);
        add(&mut graph, n + i, sink, q[i], 0.0);
        for j in 0..n {
            add(&mut graph, i, n + j, f64::INFINITY, (i as f64 - j as f64).abs());
        }
    }
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if !dist[u].is_finite() {
                    continue;
                }
                for (e, &(v, cap, cost, _)) in graph[u].iter().enumerate() {
                    if cap > 1e-15 && dist[u] + cost < dist[v] - 1e-15 {
                        dist[v] = dist[u] + cost;
                        prev[v] = Some((u, e));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while let Some((u, e)) = prev[v] {
            push = push.min(graph[u][e].1);
            v = u;
        }
        if push <= 1e-15 {
            break;
        }
        let mut v = sink;
        while let Some((u, e)) = prev[v] {
            let (to, _, cost, rev) = graph[u][e];
            graph[u][e].1 -= push;
            graph[to][rev].1 += push;
            total += push * cost;
            v = u;
        }
    }
    total
}

/// A random point of the probability simplex with `n` coordinates, some of
/// them exactly zero.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[rng.gen_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Tiny forecaster used by the gradient checks.
pub fn small_config(n_layers: usize, n_heads: usize, model_dim: usize, seq: usize) -> ForecasterConfig {
    ForecasterConfig {
        n_layers,
        n_heads,
        model_dim,
        ff_dim: 2 * model_dim,
        dropout_rate: 0.0,
        sequence_length: seq,
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 1,
        seed: 5,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, t: usize, f: usize) -> (Array3<f64>, Vec<f64>) {
    let x = Array3::from_shape_fn((b, t, f), |_| rng.gen_range(-1.0..1.0));
    let y = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (x, y)
}

/// Central-difference gradient of the batch MSE with step `h`.
pub fn numeric_gradient(weights: &ModelWeights, x: &Array3<f64>, y: &[f64], h: f64) -> Vec<f64> {
    let loss = |w: &ModelWeights| bubblefl::forecaster::loss_and_gradient(w, x.view(), y).unwrap().0;
    let mut w = weights.clone();
    (0..weights.len())
        .map(|i| {
            let orig = w.values[i];
            w.values[i] = orig + h;
            let up = loss(&w);
            w.values[i] = orig - h;
            let down = loss(&w);
            w.values[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

/// Largest per-coordinate error, scaled by `max(|a|, |b|, floor)`.
pub fn worst_coordinate_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
        .fold(0.0, f64::max)
}
