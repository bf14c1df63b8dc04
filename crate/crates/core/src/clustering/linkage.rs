use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// One agglomeration step. Cluster ids follow the usual convention: leaves
/// are `0..n`, the cluster created by merge `m` is `n + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

/// Full merge history. Average linkage can produce inversions, so the
/// merge distances are not necessarily non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Labels after applying the first `n − k` merges. Bubble ids are
    /// numbered by first appearance in client order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        if k < 1 || k > self.n {
            return Err(Error::invalid(format!("k = {k} outside 1..={}", self.n)));
        }
        let mut parent: Vec<usize> = (0..2 * self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (m, merge) in self.merges.iter().take(self.n - k).enumerate() {
            let id = self.n + m;
            let ra = find(&mut parent, merge.a);
            let rb = find(&mut parent, merge.b);
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut next = 0;
        let mut seen = std::collections::HashMap::new();
        Ok((0..self.n)
            .map(|i| {
                let root = find(&mut parent, i);
                *seen.entry(root).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect())
    }

    /// Leaf order of the dendrogram drawn left to right.
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.n == 0 {
            return Vec::new();
        }
        let root = if self.merges.is_empty() { 0 } else { self.n + self.merges.len() - 1 };
        let mut out = Vec::with_capacity(self.n);
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if id < self.n {
                out.push(id);
            } else {
                let m = &self.merges[id - self.n];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }
}

fn tie_tol(d: f64) -> f64 {
    1e-12 * d.abs().max(1.0)
}

/// Working set shared by both agglomeration paths. A cluster lives in the
/// slot of its smallest member, so scanning slots `i < j` visits pairs in
/// `(min member, min member)` order and the first minimum found wins ties.
struct Active {
    alive: Vec<bool>,
    id: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Active {
    fn new(n: usize) -> Self {
        Active {
            alive: vec![true; n],
            id: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
        }
    }

    fn closest(&self, mut dist: impl FnMut(usize, usize) -> f64) -> (usize, usize, f64) {
        let n = self.alive.len();
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in (0..n).filter(|&i| self.alive[i]) {
            for j in (i + 1..n).filter(|&j| self.alive[j]) {
                let d = dist(i, j);
                if best.0 == usize::MAX || d < best.2 - tie_tol(best.2) {
                    best = (i, j, d);
                }
            }
        }
        best
    }

    fn merge(&mut self, i: usize, j: usize, distance: f64, step: usize, n: usize) -> Merge {
        let moved = std::mem::take(&mut self.members[j]);
        self.members[i].extend(moved);
        self.alive[j] = false;
        let merge = Merge { a: self.id[i], b: self.id[j], distance, size: self.members[i].len() };
        self.id[i] = n + step;
        merge
    }
}

/// Average-linkage dendrogram using the Lance-Williams update
/// `d(k, i∪j) = (|i|·d(k,i) + |j|·d(k,j)) / (|i| + |j|)`.
pub fn dendrogram(dm: &DistanceMatrix) -> Dendrogram {
    let n = dm.len();
    let mut d: Vec<f64> = (0..n * n).map(|x| dm.get(x / n, x % n)).collect();
    let mut act = Active::new(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let (i, j, dist) = act.closest(|a, b| d[a * n + b]);
        let (si, sj) = (act.members[i].len() as f64, act.members[j].len() as f64);
        for k in (0..n).filter(|&k| act.alive[k] && k != i && k != j) {
            let v = (si * d[k * n + i] + sj * d[k * n + j]) / (si + sj);
            d[k * n + i] = v;
            d[i * n + k] = v;
        }
        merges.push(act.merge(i, j, dist, step, n));
    }
    Dendrogram { n, merges }
}

/// Average-linkage dendrogram recomputing every linkage from the original
/// point distances at each step.
pub fn dendrogram_naive(dm: &DistanceMatrix) -> Dendrogram {
    let n = dm.len();
    let mut act = Active::new(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let (i, j, dist) = {
            let members = &act.members;
            act.closest(|a, b| average_linkage(dm, &members[a], &members[b]))
        };
        merges.push(act.merge(i, j, dist, step, n));
    }
    Dendrogram { n, merges }
}

/// Mean distance over all cross pairs of `a × b`.
pub fn average_linkage(dm: &DistanceMatrix, a: &[usize], b: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &x in a {
        for &y in b {
            sum += dm.get(x, y);
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Average-linkage agglomeration down to `k` clusters.
pub fn agglomerate(dm: &DistanceMatrix, k: usize) -> Result<(Vec<usize>, Dendrogram)> {
    if k < 1 || k > dm.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", dm.len())));
    }
    let tree = dendrogram(dm);
    let labels = tree.cut(k)?;
    Ok((labels, tree))
}
