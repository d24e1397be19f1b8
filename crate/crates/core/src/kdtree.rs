//! Exact nearest-neighbor search under a diagonal weighted 2-norm.
//!
//! Coordinates are pre-multiplied by sqrt(w_i) at construction so plain
//! Euclidean search in the scaled space equals the weighted metric. Ties
//! are broken by lexicographic comparison of the original coordinates.

use crate::error::{Error, Result};
use crate::sampling::Metric;

const DIM: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    /// Index into `points` of the splitting point.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct WeightedKdTree {
    /// Original (unscaled) points.
    points: Vec<[f64; DIM]>,
    scaled: Vec<[f64; DIM]>,
    nodes: Vec<Node>,
    root: usize,
    metric: Metric,
}

fn lex_less(a: &[f64; DIM], b: &[f64; DIM]) -> bool {
    cmp_lex(a, b) == std::cmp::Ordering::Less
}

fn cmp_lex(a: &[f64; DIM], b: &[f64; DIM]) -> std::cmp::Ordering {
    for i in 0..DIM {
        match a[i].partial_cmp(&b[i]).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

impl WeightedKdTree {
    pub fn build(points: &[[f64; DIM]], metric: &Metric) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let scale = metric.weights.map(f64::sqrt);
        let scaled: Vec<[f64; DIM]> = points
            .iter()
            .map(|p| std::array::from_fn(|i| p[i] * scale[i]))
            .collect();
        let mut tree = Self {
            points: points.to_vec(),
            scaled,
            nodes: Vec::with_capacity(points.len()),
            root: 0,
            metric: *metric,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(&mut idx, 0).expect("non-empty");
        Ok(tree)
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % DIM;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            self.scaled[a][axis]
                .partial_cmp(&self.scaled[b][axis])
                .unwrap()
                .then_with(|| cmp_lex(&self.points[a], &self.points[b]))
        });
        let point = idx[mid];
        let (left_idx, rest) = idx.split_at_mut(mid);
        let right_idx = &mut rest[1..];
        let left = self.build_rec(left_idx, depth + 1);
        let right = self.build_rec(right_idx, depth + 1);
        self.nodes.push(Node {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Exact nearest neighbor of `q` under the weighted metric.
    /// Returns the stored point and its distance.
    pub fn nearest(&self, q: &[f64; DIM]) -> ([f64; DIM], f64) {
        let scale = self.metric.weights.map(f64::sqrt);
        let qs: [f64; DIM] = std::array::from_fn(|i| q[i] * scale[i]);
        let mut best = self.nodes[self.root].point;
        let mut best_d2 = dist2(&self.scaled[best], &qs);
        self.search(self.root, &qs, &mut best, &mut best_d2);
        (self.points[best], best_d2.sqrt())
    }

    fn search(&self, node_idx: usize, qs: &[f64; DIM], best: &mut usize, best_d2: &mut f64) {
        let node = &self.nodes[node_idx];
        let p = node.point;
        let d2 = dist2(&self.scaled[p], qs);
        if d2 < *best_d2 || (d2 == *best_d2 && lex_less(&self.points[p], &self.points[*best])) {
            *best = p;
            *best_d2 = d2;
        }
        let delta = qs[node.axis] - self.scaled[p][node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, qs, best, best_d2);
        }
        // The far half-space can still hold an equal-distance point that
        // wins the lexicographic tie-break, so prune on strict inequality.
        if let Some(f) = far {
            if delta * delta <= *best_d2 {
                self.search(f, qs, best, best_d2);
            }
        }
    }
}

fn dist2(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    let mut acc = 0.0;
    for i in 0..DIM {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}
