//! Axis-aligned bounding-volume hierarchy for exact point-to-mesh distance.

use super::{closest_point_on_triangle, dist2, Point3, TriMesh};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: &Point3) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a]);
        }
    }

    fn dist2(&self, p: &Point3) -> f64 {
        (0..3)
            .map(|a| {
                let d = (self.lo[a] - p[a]).max(0.0).max(p[a] - self.hi[a]);
                d * d
            })
            .sum()
    }
}

enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

pub struct MeshIndex<'a> {
    mesh: &'a TriMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl<'a> MeshIndex<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let mut index = MeshIndex {
            mesh,
            order: (0..mesh.faces().len()).collect(),
            nodes: Vec::new(),
        };
        let centroids: Vec<Point3> = (0..mesh.faces().len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                [
                    (a[0] + b[0] + c[0]) / 3.0,
                    (a[1] + b[1] + c[1]) / 3.0,
                    (a[2] + b[2] + c[2]) / 3.0,
                ]
            })
            .collect();
        index.build(0, mesh.faces().len(), &centroids);
        index
    }

    fn face_bounds(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.mesh.triangle(f) {
                b.grow(&v);
            }
        }
        b
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Point3]) -> usize {
        let id = self.nodes.len();
        let bounds = self.face_bounds(start, end);
        if end - start <= LEAF_SIZE {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| {
                (bounds.hi[a] - bounds.lo[a]).total_cmp(&(bounds.hi[b] - bounds.lo[b]))
            })
            .unwrap();
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        self.nodes.push(BvhNode::Leaf {
            bounds,
            start: 0,
            end: 0,
        });
        let left = self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        self.nodes[id] = BvhNode::Inner {
            bounds,
            left,
            right,
        };
        id
    }

    /// Exact Euclidean distance from `p` to the closest face.
    pub fn distance(&self, p: &Point3) -> f64 {
        self.closest(p).0.sqrt()
    }

    /// `(squared distance, face index)` of the closest face.
    pub fn closest(&self, p: &Point3) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().dist2(p) > best.0 {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let q = closest_point_on_triangle(p, &self.mesh.triangle(f));
                        let d = dist2(p, &q);
                        if d < best.0 || (d == best.0 && f < best.1) {
                            best = (d, f);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    // push the farther child first so the nearer is visited first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}
