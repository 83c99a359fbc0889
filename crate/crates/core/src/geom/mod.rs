//! Point clouds, triangle meshes and the geometric queries built on them.

mod bvh;
mod kdtree;

pub use bvh::MeshIndex;
pub use kdtree::KdTree;

use rand::Rng;
use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("k = {k} must be smaller than the point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("cannot select {m} points from {n}")]
    SampleSize { m: usize, n: usize },
    #[error("seed index {seed} out of range for {n} points")]
    InvalidSeed { seed: usize, n: usize },
    #[error("triangle is degenerate")]
    DegenerateTriangle,
    #[error("mesh has no faces or zero total area")]
    EmptyMesh,
    #[error("face {face} references vertex {index}, but the mesh has {vertices} vertices")]
    InvalidFace {
        face: usize,
        index: usize,
        vertices: usize,
    },
    #[error("flat coordinate buffer length {0} is not a multiple of 3")]
    FlatLength(usize),
}

pub type Result<T> = std::result::Result<T, GeomError>;

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
fn axpy(a: &Point3, t: f64, d: &Point3) -> Point3 {
    [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]]
}

/// Ordered, non-empty list of finite 3-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeomError::NonFinite { index });
        }
        Ok(PointCloud { points })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(GeomError::FlatLength(flat.len()));
        }
        PointCloud::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Sub-cloud in the order given by `idx`. Panics on out-of-range indices.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
        }
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.points)
    }
}

pub fn bbox_diagonal(points: &[Point3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    dist(&lo, &hi)
}

/// Indexed triangle mesh with precomputed face areas.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    areas: Vec<f64>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(GeomError::InvalidFace {
                    face: f,
                    index,
                    vertices: vertices.len(),
                });
            }
        }
        if let Some(index) = vertices.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeomError::NonFinite { index });
        }
        let areas: Vec<f64> = faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| vertices[i]);
                let n = cross(&sub(&b, &a), &sub(&c, &a));
                0.5 * dot(&n, &n).sqrt()
            })
            .collect();
        if areas.iter().sum::<f64>() <= 0.0 {
            return Err(GeomError::EmptyMesh);
        }
        Ok(TriMesh {
            vertices,
            faces,
            areas,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(&Point3) -> Point3) -> Result<TriMesh> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }
}

/// k-nearest-neighbor adjacency; row `i` lists the `k` nearest other points
/// of point `i`, nearest first, ties by lower index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Flat row-major `n×k` index table.
    pub fn table(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}

pub fn build_knn(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    knn_table(cloud.points(), k).map(|neighbors| KnnGraph { k, neighbors })
}

/// Flat `n×k` self-excluding neighbor table over raw points.
pub fn knn_table(points: &[Point3], k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(GeomError::KTooLarge { k, n });
    }
    let tree = KdTree::new(points);
    let mut table = Vec::with_capacity(n * k);
    for (i, p) in points.iter().enumerate() {
        table.extend(tree.knn(p, k, Some(i)).into_iter().map(|(_, j)| j));
    }
    Ok(table)
}

/// Greedy max-min subset selection starting from `seed`. Ties go to the
/// lower index; the result holds `m` distinct indices in selection order.
pub fn farthest_point_sample(points: &[Point3], m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(GeomError::SampleSize { m, n });
    }
    if seed >= n {
        return Err(GeomError::InvalidSeed { seed, n });
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed;
    loop {
        selected[current] = true;
        out.push(current);
        if out.len() == m {
            return Ok(out);
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
}

/// Indices of all points within distance `r` of `center`, ascending.
pub fn ball_query(cloud: &PointCloud, center: &Point3, r: f64) -> Vec<usize> {
    KdTree::new(cloud.points()).within(center, r)
}

/// Centers the cloud at its centroid and scales it into the unit ball.
/// Returns the normalized cloud with the centroid and radius needed to undo
/// it. A cloud with no spread maps to the origin with radius 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> (PointCloud, Point3, f64) {
    let n = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    for p in cloud.points() {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let centered = cloud.map(|p| sub(p, &centroid));
    let radius = centered
        .points()
        .iter()
        .map(|p| dot(p, p).sqrt())
        .fold(0.0, f64::max);
    let magnitude = cloud
        .points()
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    if radius <= 1e-12 * magnitude {
        return (centered.map(|_| [0.0; 3]), centroid, 1.0);
    }
    (centered.map(|p| p.map(|v| v / radius)), centroid, radius)
}

pub fn denormalize(cloud: &PointCloud, centroid: &Point3, radius: f64) -> PointCloud {
    cloud.map(|p| axpy(centroid, radius, p))
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh_surface<R: Rng + ?Sized>(
    mesh: &TriMesh,
    m: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if mesh.faces().is_empty() {
        return Err(GeomError::EmptyMesh);
    }
    if m == 0 {
        return Err(GeomError::SampleSize { m, n: 0 });
    }
    let mut cdf = Vec::with_capacity(mesh.areas().len());
    let mut acc = 0.0;
    for a in mesh.areas() {
        acc += a;
        cdf.push(acc);
    }
    let total = acc;
    let points = (0..m)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}

/// Blue-noise style subset of `m` points: farthest-point selection over the
/// dense cloud, seeded at index 0.
pub fn blue_noise_downsample(cloud: &PointCloud, m: usize) -> Result<PointCloud> {
    let idx = farthest_point_sample(cloud.points(), m, 0)?;
    Ok(cloud.select(&idx))
}

fn triangle_is_degenerate(tri: &[Point3; 3]) -> bool {
    let ab = sub(&tri[1], &tri[0]);
    let ac = sub(&tri[2], &tri[0]);
    let n = cross(&ab, &ac);
    let scale = dot(&ab, &ab).max(dot(&ac, &ac));
    dot(&n, &n).sqrt() <= 1e-14 * scale || scale == 0.0
}

fn closest_point_on_segment(p: &Point3, a: &Point3, b: &Point3) -> Point3 {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    if len2 == 0.0 {
        return *a;
    }
    let t = (dot(&sub(p, a), &ab) / len2).clamp(0.0, 1.0);
    axpy(a, t, &ab)
}

/// Closest point on the closed triangle. Degenerate triangles fall back to
/// their edges.
pub fn closest_point_on_triangle(p: &Point3, tri: &[Point3; 3]) -> Point3 {
    let [a, b, c] = tri;
    if triangle_is_degenerate(tri) {
        return [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(u, v)| closest_point_on_segment(p, u, v))
            .min_by(|x, y| dist2(p, x).total_cmp(&dist2(p, y)))
            .unwrap();
    }
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return axpy(a, d1 / (d1 - d3), &ab);
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return axpy(a, d2 / (d2 - d6), &ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return axpy(b, w, &sub(c, b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [0, 1, 2].map(|k| a[k] + ab[k] * v + ac[k] * w)
}

/// Exact Euclidean distance from `p` to the closed triangle.
pub fn point_triangle_distance(p: &Point3, tri: &[Point3; 3]) -> Result<f64> {
    if triangle_is_degenerate(tri) {
        return Err(GeomError::DegenerateTriangle);
    }
    Ok(dist(p, &closest_point_on_triangle(p, tri)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        cloud(
            &(0..n)
                .map(|_| [rng.random(), rng.random(), rng.random()])
                .collect::<Vec<_>>(),
        )
    }

    fn brute_knn(points: &[Point3], i: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, q)| (dist2(&points[i], q), j))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, j)| j).collect()
    }

    #[test]
    fn cloud_rejects_empty_and_nan() {
        assert_eq!(PointCloud::new(vec![]), Err(GeomError::EmptyCloud));
        assert_eq!(
            PointCloud::new(vec![[0.0; 3], [f64::NAN, 0.0, 0.0]]),
            Err(GeomError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn knn_colinear() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let g = build_knn(&c, 1).unwrap();
        // point 1 is equidistant from 0 and 2; lower index wins
        assert_eq!(g.table(), &[1, 0, 1]);
    }

    #[test]
    fn knn_duplicate_is_nearest() {
        let c = cloud(&[[0.0; 3], [5.0, 0.0, 0.0], [0.0; 3], [1.0, 1.0, 1.0]]);
        let g = build_knn(&c, 1).unwrap();
        assert_eq!(g.row(0), &[2]);
        assert_eq!(g.row(2), &[0]);
    }

    #[test]
    fn knn_rejects_large_k() {
        let c = cloud(&[[0.0; 3], [1.0; 3]]);
        assert_eq!(build_knn(&c, 2), Err(GeomError::KTooLarge { k: 2, n: 2 }));
    }

    #[test]
    fn knn_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // quantized coordinates produce many exact distance ties
        let pts: Vec<Point3> = (0..200)
            .map(|_| [0, 0, 0].map(|_: i32| rng.random_range(0..5) as f64))
            .collect();
        let c = cloud(&pts);
        let g = build_knn(&c, 6).unwrap();
        for i in 0..pts.len() {
            assert_eq!(g.row(i), brute_knn(&pts, i, 6).as_slice(), "row {i}");
        }
    }

    #[test]
    fn fps_examples() {
        let line = |xs: &[f64]| xs.iter().map(|&x| [x, 0.0, 0.0]).collect::<Vec<_>>();
        let pts = line(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 3]);
        let mut all = farthest_point_sample(&pts, 4, 0).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(
            farthest_point_sample(&pts, 5, 0),
            Err(GeomError::SampleSize { m: 5, n: 4 })
        );
        assert_eq!(
            farthest_point_sample(&pts, 1, 9),
            Err(GeomError::InvalidSeed { seed: 9, n: 4 })
        );
    }

    #[test]
    fn fps_with_duplicates_returns_distinct_indices() {
        let pts = vec![[0.0; 3]; 5];
        assert_eq!(farthest_point_sample(&pts, 5, 2).unwrap(), vec![2, 0, 1, 3, 4]);
    }

    #[test]
    fn ball_query_edges() {
        let c = cloud(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        assert_eq!(ball_query(&c, &[0.0; 3], 0.5), vec![0, 1]);
        assert_eq!(ball_query(&c, &[0.0; 3], 10.0), vec![0, 1, 2, 3]);
        assert_eq!(ball_query(&c, &[0.0; 3], 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn normalize_cases() {
        let single = cloud(&[[3.0, -2.0, 7.0]]);
        let (n, c, r) = normalize_unit_sphere(&single);
        assert_eq!(n.points(), &[[0.0; 3]]);
        assert_eq!(c, [3.0, -2.0, 7.0]);
        assert_eq!(r, 1.0);

        let same = cloud(&[[0.1, 0.2, 0.3]; 3]);
        let (n, _, r) = normalize_unit_sphere(&same);
        assert_eq!(r, 1.0);
        assert!(n.points().iter().all(|p| *p == [0.0; 3]));

        let unit = cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]]);
        let (n, c, r) = normalize_unit_sphere(&unit);
        assert_eq!(c, [0.0; 3]);
        assert_eq!(r, 1.0);
        assert_eq!(n, unit);
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_cloud(&mut rng, 50).map(|p| p.map(|v| 40.0 * v - 7.0));
        let (n, centroid, r) = normalize_unit_sphere(&c);
        let max_norm = n.points().iter().map(|p| dot(p, p).sqrt()).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        let back = denormalize(&n, &centroid, r);
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!(dist(a, b) < 1e-12);
        }
    }

    #[test]
    fn samples_inside_single_triangle() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_mesh_surface(&mesh, 500, &mut rng).unwrap();
        for p in s.points() {
            // barycentric coordinates recovered from the right-angle layout
            let (u, v) = (p[0] / 2.0, p[1]);
            assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
            assert!(point_triangle_distance(p, &mesh.triangle(0)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn sampling_follows_area_ratio() {
        // triangle 0 has area 4.5, triangle 1 area 0.5 (9:1)
        let mesh = TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 3.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 10_000;
        let s = sample_mesh_surface(&mesh, m, &mut rng).unwrap();
        let big = s.points().iter().filter(|p| p[0] < 5.0).count() as f64;
        let sigma = (m as f64 * 0.9 * 0.1).sqrt();
        assert!((big - 0.9 * m as f64).abs() <= 3.0 * sigma, "{big}");
    }

    #[test]
    fn blue_noise_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cloud(&mut rng, 20);
        assert_eq!(blue_noise_downsample(&c, 1).unwrap().points(), &[c.points()[0]]);
        let mut all = blue_noise_downsample(&c, 20).unwrap().into_points();
        let mut orig = c.points().to_vec();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
        assert!(blue_noise_downsample(&c, 21).is_err());
    }

    #[test]
    fn point_triangle_regions() {
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(point_triangle_distance(&[0.2, 0.2, 0.0], &tri).unwrap() < 1e-15);
        let d = point_triangle_distance(&[0.2, 0.2, 3.0], &tri).unwrap();
        assert!((d - 3.0).abs() < 1e-15);
        // above vertex b, offset outward
        let d = point_triangle_distance(&[2.0, -1.0, 0.0], &tri).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        // edge region of the hypotenuse
        let d = point_triangle_distance(&[1.0, 1.0, 0.0], &tri).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        let flat = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(
            point_triangle_distance(&[0.0; 3], &flat),
            Err(GeomError::DegenerateTriangle)
        );
    }

    #[test]
    fn point_triangle_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tri = [[0.1, 0.0, 0.2], [1.0, 0.3, -0.1], [0.2, 0.9, 0.4]];
        // dense barycentric grid as the oracle surface
        let steps = 400;
        let mut grid = Vec::new();
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let (u, v) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let w = 1.0 - u - v;
                grid.push([0, 1, 2].map(|k| w * tri[0][k] + u * tri[1][k] + v * tri[2][k]));
            }
        }
        for _ in 0..20 {
            let q: Point3 = [0, 1, 2].map(|_: i32| rng.random_range(-1.0..2.0));
            let exact = point_triangle_distance(&q, &tri).unwrap();
            let oracle = grid.iter().map(|g| dist(&q, g)).fold(f64::INFINITY, f64::min);
            assert!(oracle >= exact - 1e-12);
            assert!(oracle - exact < 1e-3, "{oracle} vs {exact}");
        }
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vertices: Vec<Point3> = (0..60)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let faces: Vec<[usize; 3]> = (0..40)
            .map(|_| [0, 0, 0].map(|_: i32| rng.random_range(0..60)))
            .collect();
        let mesh = TriMesh::new(vertices, faces).unwrap();
        let index = MeshIndex::new(&mesh);
        for _ in 0..200 {
            let q: Point3 = [rng.random_range(-0.5..1.5), rng.random(), rng.random()];
            let brute = (0..mesh.faces().len())
                .map(|f| dist2(&q, &closest_point_on_triangle(&q, &mesh.triangle(f))))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(index.closest(&q).0, brute);
        }
    }

    #[test]
    fn mesh_rejects_bad_faces() {
        assert!(matches!(
            TriMesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]),
            Err(GeomError::InvalidFace { index: 1, .. })
        ));
        assert_eq!(TriMesh::new(vec![[0.0; 3]], vec![]), Err(GeomError::EmptyMesh));
    }
}
