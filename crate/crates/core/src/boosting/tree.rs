use ndarray::ArrayView2;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Reduction in training squared error achieved by this split.
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn is_stump_leaf(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::Leaf { .. }])
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Per-feature row orderings, computed once per training set.
pub(crate) struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub(crate) fn new(x: ArrayView2<f64>) -> Self {
        let order = (0..x.ncols())
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.nrows()).collect();
                idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

pub(crate) struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    sorted: &'a Presorted,
    max_depth: usize,
    min_leaf: usize,
    /// Node id each row currently sits in.
    marker: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    pub(crate) fn new(
        x: ArrayView2<'a, f64>,
        sorted: &'a Presorted,
        max_depth: usize,
        min_leaf: usize,
    ) -> Self {
        TreeBuilder {
            x,
            sorted,
            max_depth,
            min_leaf,
            marker: vec![0; x.nrows()],
            nodes: Vec::new(),
        }
    }

    /// Fits a tree to `residual` by exact greedy search on squared error.
    pub(crate) fn fit(mut self, residual: &[f64]) -> Tree {
        self.marker.iter_mut().for_each(|m| *m = 0);
        self.nodes.clear();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let rows: Vec<usize> = (0..self.x.nrows()).collect();
        self.grow(0, rows, 0, residual);
        Tree { nodes: self.nodes }
    }

    fn grow(&mut self, id: usize, rows: Vec<usize>, depth: usize, r: &[f64]) {
        let sum: f64 = rows.iter().map(|&i| r[i]).sum();
        let mean = sum / rows.len() as f64;
        let split = if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            self.best_split(id, &rows, sum, r)
        } else {
            None
        };
        let Some(split) = split else {
            self.nodes[id] = Node::Leaf { value: mean };
            return;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[[i, split.feature]] <= split.threshold);
        let left = self.nodes.len();
        let right = left + 1;
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.nodes.push(Node::Leaf { value: 0.0 });
        for &i in &left_rows {
            self.marker[i] = left;
        }
        for &i in &right_rows {
            self.marker[i] = right;
        }
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left,
            right,
        };
        self.grow(left, left_rows, depth + 1, r);
        self.grow(right, right_rows, depth + 1, r);
    }

    fn best_split(&self, id: usize, rows: &[usize], sum: f64, r: &[f64]) -> Option<BestSplit> {
        let n = rows.len();
        let parent = sum * sum / n as f64;
        let sse: f64 = rows.iter().map(|&i| r[i] * r[i]).sum::<f64>() - parent;
        // gains below this are rounding noise, not a real reduction in error
        let tol = 1e-12 * sse.abs().max(1e-300) + 1e-15;
        let mut best: Option<BestSplit> = None;
        let mut in_node: Vec<usize> = Vec::with_capacity(n);
        for f in 0..self.x.ncols() {
            in_node.clear();
            in_node.extend(self.sorted.order[f].iter().copied().filter(|&i| self.marker[i] == id));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += r[in_node[k]];
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let a = self.x[[in_node[k], f]];
                let b = self.x[[in_node[k + 1], f]];
                if a == b {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent;
                if gain > tol && best.as_ref().is_none_or(|s| gain > s.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }
}
