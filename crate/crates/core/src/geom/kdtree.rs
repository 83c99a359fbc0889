//! Static kd-tree over a borrowed point slice.
//!
//! Neighbors are ranked by `(squared distance, index)` so results are
//! identical to a brute-force scan, including tie order.

use super::{dist2, Point3};

const LEAF_SIZE: usize = 8;

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn points(&self) -> &'a [Point3] {
        self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis])
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query` as `(squared distance, index)`,
    /// nearest first, skipping `exclude`.
    pub fn knn(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, query, k, exclude, &mut best);
        }
        best
    }

    fn knn_rec(
        &self,
        node: usize,
        q: &Point3,
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (dist2(q, &self.points[i]), i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|&(d, j)| d < cand.0 || (d == cand.0 && j < cand.1));
                    best.insert(pos, cand);
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, exclude, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.knn_rec(far, q, k, exclude, best);
                }
            }
        }
    }

    /// Nearest point to `query` as `(squared distance, index)`.
    pub fn nearest(&self, query: &Point3) -> Option<(f64, usize)> {
        self.knn(query, 1, None).into_iter().next()
    }

    /// Indices of all points within distance `radius` of `center`, ascending.
    pub fn within(&self, center: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_rec(0, center, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, c: &Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => out.extend(
                self.order[start..end]
                    .iter()
                    .copied()
                    .filter(|&i| dist2(c, &self.points[i]) <= r2),
            ),
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = c[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, c, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, c, r2, out);
                }
            }
        }
    }
}
