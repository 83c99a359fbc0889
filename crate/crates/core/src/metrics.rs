//! Evaluation metrics: Chamfer distance, earth mover's distance, F-score,
//! normalized uniformity coefficient and point-to-surface deviation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{dist, sample_mesh_surface, GeomError, KdTree, MeshIndex, PointCloud, TriMesh};
use crate::loss::{sinkhorn_linear_cost, SinkhornConfig};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("exact EMD needs equal sizes, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("exact EMD is limited to {limit} points, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const DEFAULT_EMD_LIMIT: usize = 512;

/// Mean squared nearest-neighbor distance, summed over both directions.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    directed_mean(a, b, |d2| d2) + directed_mean(b, a, |d2| d2)
}

fn directed_mean(from: &PointCloud, to: &PointCloud, f: impl Fn(f64) -> f64) -> f64 {
    let tree = KdTree::new(to.points());
    from.points()
        .iter()
        .map(|p| f(tree.nearest(p).expect("nonempty cloud").0))
        .sum::<f64>()
        / from.len() as f64
}

/// Mean nearest-neighbor Euclidean distance from `from` to `to`.
pub fn directed_nn_distance(from: &PointCloud, to: &PointCloud) -> f64 {
    directed_mean(from, to, f64::sqrt)
}

/// Minimum-cost perfect matching of a square cost matrix (row-major).
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based potentials with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Exact EMD: the minimum over bijections of the mean Euclidean distance.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    emd_exact_bounded(a, b, DEFAULT_EMD_LIMIT)
}

pub fn emd_exact_bounded(a: &PointCloud, b: &PointCloud, limit: usize) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(MetricError::SizeMismatch(n, b.len()));
    }
    if n > limit {
        return Err(MetricError::TooLarge { n, limit });
    }
    let mut cost = Vec::with_capacity(n * n);
    for p in a.points() {
        cost.extend(b.points().iter().map(|q| dist(p, q)));
    }
    let assignment = hungarian(&cost, n);
    Ok(assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// Entropic surrogate of EMD: the linear transport cost of the entropic plan,
/// and whether the solver reached its tolerance.
pub fn emd_approx(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> (f64, bool) {
    let sol = sinkhorn_linear_cost(a.points(), b.points(), cfg);
    (sol.primal, sol.converged)
}

/// F-score at threshold `tau`.
pub fn fscore(yp: &PointCloud, y: &PointCloud, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(MetricError::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let within = |from: &PointCloud, to: &PointCloud| {
        let tree = KdTree::new(to.points());
        let hits = from
            .points()
            .iter()
            .filter(|p| tree.nearest(p).expect("nonempty cloud").0.sqrt() <= tau)
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = within(yp, y);
    let recall = within(y, yp);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Default F-score threshold: 1% of the ground-truth bounding-box diagonal.
pub fn default_tau(y: &PointCloud) -> f64 {
    0.01 * y.bbox_diagonal()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NucConfig {
    pub p: f64,
    pub seeds: usize,
    /// Points farther than this fraction of the mesh diagonal from the
    /// surface are not counted.
    pub surface_tolerance: f64,
}

impl Default for NucConfig {
    fn default() -> Self {
        NucConfig {
            p: 0.008,
            seeds: 100,
            surface_tolerance: 0.02,
        }
    }
}

/// Normalized uniformity coefficient: the population standard deviation of
/// `n_i / (N·p)` over disks of area fraction `p` centered at random surface
/// points.
pub fn nuc<R: Rng + ?Sized>(yp: &PointCloud, mesh: &TriMesh, cfg: &NucConfig, rng: &mut R) -> Result<f64> {
    if !(cfg.p > 0.0 && cfg.p < 1.0) {
        return Err(MetricError::InvalidParameter(format!("p must lie in (0, 1), got {}", cfg.p)));
    }
    if cfg.seeds < 2 {
        return Err(MetricError::InvalidParameter(format!("need at least 2 seeds, got {}", cfg.seeds)));
    }
    if mesh.faces().is_empty() {
        return Err(GeomError::EmptyMesh.into());
    }
    let seeds = sample_mesh_surface(mesh, cfg.seeds, rng)?;
    let index = MeshIndex::new(mesh);
    let tol = cfg.surface_tolerance * mesh.bbox_diagonal();
    let near_surface: Vec<bool> = yp.points().iter().map(|p| index.distance(p) <= tol).collect();
    let radius = (cfg.p * mesh.total_area() / std::f64::consts::PI).sqrt();
    let tree = KdTree::new(yp.points());
    let expected = yp.len() as f64 * cfg.p;
    let ratios: Vec<f64> = seeds
        .points()
        .iter()
        .map(|s| {
            let count = tree.within(s, radius).into_iter().filter(|&i| near_surface[i]).count();
            count as f64 / expected
        })
        .collect();
    Ok(population_std(&ratios).1)
}

/// Mean and population standard deviation.
pub fn population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each point's distance to the
/// mesh surface.
pub fn deviation_stats(yp: &PointCloud, mesh: &TriMesh) -> Result<(f64, f64)> {
    if mesh.faces().is_empty() {
        return Err(GeomError::EmptyMesh.into());
    }
    let index = MeshIndex::new(mesh);
    let d: Vec<f64> = yp.points().iter().map(|p| index.distance(p)).collect();
    Ok(population_std(&d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdMethod {
    Exact,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd: f64,
    pub emd: f64,
    pub emd_method: EmdMethod,
    pub fscore: f64,
    pub nuc_p008: Option<f64>,
    pub dev_mean: Option<f64>,
    pub dev_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub emd_limit: usize,
    pub emd_sinkhorn: SinkhornConfig,
    /// Larger clouds get their Sinkhorn EMD estimated on random subsets of
    /// this size, since the dense cost matrix grows quadratically.
    pub emd_max_points: usize,
    /// F-score threshold as a fraction of the ground-truth diagonal.
    pub tau_fraction: f64,
    pub nuc: NucConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            emd_limit: DEFAULT_EMD_LIMIT,
            emd_sinkhorn: SinkhornConfig::default(),
            emd_max_points: 1024,
            tau_fraction: 0.01,
            nuc: NucConfig::default(),
        }
    }
}

/// Every metric for one prediction. Mesh-based metrics are skipped when no
/// mesh is given.
pub fn evaluate<R: Rng + ?Sized>(
    yp: &PointCloud,
    y: &PointCloud,
    mesh: Option<&TriMesh>,
    cfg: &MetricConfig,
    rng: &mut R,
) -> Result<MetricReport> {
    let mut notes = Vec::new();
    let (emd, emd_method) = if yp.len() == y.len() && yp.len() <= cfg.emd_limit {
        (emd_exact_bounded(yp, y, cfg.emd_limit)?, EmdMethod::Exact)
    } else if yp.len().max(y.len()) > cfg.emd_max_points {
        let m = cfg.emd_max_points;
        let pick = |c: &PointCloud, rng: &mut R| c.select(&rand::seq::index::sample(rng, c.len(), m.min(c.len())).into_vec());
        let (a, b) = (pick(yp, rng), pick(y, rng));
        let (v, converged) = emd_approx(&a, &b, &cfg.emd_sinkhorn);
        notes.push(format!("emd: estimated on random {}- and {}-point subsets", a.len(), b.len()));
        if !converged {
            notes.push("emd: Sinkhorn stopped at max_iters".to_string());
        }
        (v, EmdMethod::Sinkhorn)
    } else {
        let (v, converged) = emd_approx(yp, y, &cfg.emd_sinkhorn);
        if !converged {
            notes.push("emd: Sinkhorn stopped at max_iters".to_string());
        }
        (v, EmdMethod::Sinkhorn)
    };
    let (nuc_p008, dev_mean, dev_std) = match mesh {
        Some(mesh) => {
            let (mean, std) = deviation_stats(yp, mesh)?;
            (Some(nuc(yp, mesh, &cfg.nuc, rng)?), Some(mean), Some(std))
        }
        None => (None, None, None),
    };
    Ok(MetricReport {
        cd: chamfer(yp, y),
        emd,
        emd_method,
        fscore: fscore(yp, y, cfg.tau_fraction * y.bbox_diagonal())?,
        nuc_p008,
        dev_mean,
        dev_std,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{farthest_point_sample, Point3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect()).unwrap()
    }

    fn brute_emd(a: &PointCloud, b: &PointCloud) -> f64 {
        fn go(i: usize, used: &mut Vec<bool>, a: &[Point3], b: &[Point3]) -> f64 {
            if i == a.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(dist(&a[i], &b[j]) + go(i + 1, used, a, b));
                    used[j] = false;
                }
            }
            best
        }
        go(0, &mut vec![false; b.len()], a.points(), b.points()) / a.len() as f64
    }

    fn square() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 30);
        let y = random_cloud(&mut rng, 20);
        assert_eq!(chamfer(&x, &x), 0.0);
        assert!((chamfer(&x, &y) - chamfer(&y, &x)).abs() < 1e-15);
    }

    #[test]
    fn emd_two_points() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.1, 0.0, 0.0], [1.2, 0.0, 0.0]]);
        let identity: f64 = (0.1 + 0.2) / 2.0;
        let swap = (1.2 + 0.9) / 2.0;
        assert!((emd_exact(&a, &b).unwrap() - identity.min(swap)).abs() < 1e-15);
        assert_eq!(emd_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn emd_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=7 {
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, n);
            let e = emd_exact(&a, &b).unwrap();
            assert!((e - brute_emd(&a, &b)).abs() < 1e-12);
            assert!(e + 1e-12 >= directed_nn_distance(&a, &b).max(directed_nn_distance(&b, &a)));
        }
    }

    #[test]
    fn emd_errors() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.0; 3], [1.0; 3]]);
        assert!(matches!(emd_exact(&a, &b), Err(MetricError::SizeMismatch(1, 2))));
        assert!(matches!(emd_exact_bounded(&b, &b, 1), Err(MetricError::TooLarge { .. })));
    }

    #[test]
    fn emd_approx_examples() {
        let cfg = SinkhornConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 4, 8] {
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, n);
            let exact = emd_exact(&a, &b).unwrap();
            let (approx, _) = emd_approx(&a, &b, &cfg);
            assert!((approx - exact).abs() <= 0.05 * exact, "n {n}: {approx} vs {exact}");
            assert!(emd_approx(&a, &a, &cfg).0.abs() < 1e-4);
        }
        let o = cloud(&[[0.0; 3]]);
        let d1 = emd_approx(&o, &cloud(&[[0.3, 0.0, 0.0]]), &cfg).0;
        let d2 = emd_approx(&o, &cloud(&[[0.6, 0.0, 0.0]]), &cfg).0;
        assert!((d2 / d1 - 2.0).abs() < 0.1);
    }

    #[test]
    fn fscore_examples() {
        let y = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(fscore(&y, &y, 0.01).unwrap(), 1.0);
        let far = cloud(&[[5.0; 3]]);
        assert_eq!(fscore(&far, &y, 0.01).unwrap(), 0.0);
        let y1 = cloud(&[[0.0; 3]]);
        let yp = cloud(&[[0.0; 3], [3.0, 0.0, 0.0]]);
        assert!((fscore(&yp, &y1, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(fscore(&yp, &y1, 0.0).is_err());
    }

    #[test]
    fn nuc_balanced_counts() {
        // ratios all equal to one give zero
        let (mean, std) = population_std(&[1.0, 1.0]);
        assert_eq!((mean, std), (1.0, 0.0));
    }

    #[test]
    fn nuc_prefers_blue_noise() {
        let mesh = square();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense = sample_mesh_surface(&mesh, 20000, &mut rng).unwrap();
        let idx = farthest_point_sample(dense.points(), 1000, 0).unwrap();
        let blue = dense.select(&idx);
        let clustered = blue.map(|p| [0.3 * p[0], 0.3 * p[1], 0.0]);
        let cfg = NucConfig::default();
        let a = nuc(&blue, &mesh, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = nuc(&clustered, &mesh, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(b > a, "clustered {b} blue {a}");
        let again = nuc(&blue, &mesh, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, again);
        let bad = NucConfig { seeds: 1, ..cfg };
        assert!(nuc(&blue, &mesh, &bad, &mut rng).is_err());
    }

    #[test]
    fn deviation_examples() {
        let mesh = square();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let on = sample_mesh_surface(&mesh, 200, &mut rng).unwrap();
        let (m, s) = deviation_stats(&on, &mesh).unwrap();
        assert!(m < 1e-9 && s < 1e-9);
        let big = TriMesh::new(
            vec![[-100.0, -100.0, 0.0], [100.0, -100.0, 0.0], [0.0, 100.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (m, s) = deviation_stats(&cloud(&[[0.1, 0.2, 0.7]]), &big).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_cloud(&mut rng, 12);
        let b = random_cloud(&mut rng, 12);
        let (s, c) = 0.4f64.sin_cos();
        let t = |p: &Point3| [c * p[0] - s * p[2] + 0.3, p[1] - 0.2, s * p[0] + c * p[2] + 0.1];
        let (ra, rb) = (a.map(t), b.map(t));
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
        assert!(rel(chamfer(&a, &b), chamfer(&ra, &rb)) < 1e-9);
        assert!(rel(emd_exact(&a, &b).unwrap(), emd_exact(&ra, &rb).unwrap()) < 1e-9);
        assert_eq!(fscore(&a, &b, 0.5).unwrap(), fscore(&ra, &rb, 0.5).unwrap());
    }

    #[test]
    fn report_json_keys() {
        let mesh = square();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = sample_mesh_surface(&mesh, 64, &mut rng).unwrap();
        let yp = sample_mesh_surface(&mesh, 64, &mut rng).unwrap();
        let report = evaluate(&yp, &y, Some(&mesh), &MetricConfig::default(), &mut rng).unwrap();
        assert_eq!(report.emd_method, EmdMethod::Exact);
        let json = serde_json::to_value(&report).unwrap();
        for key in ["cd", "emd", "fscore", "nuc_p008", "dev_mean", "dev_std"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!((0.0..=1.0).contains(&report.fscore));
    }

    #[test]
    fn large_clouds_use_emd_subsets() {
        // a translated copy: every transport plan pairs points at the same
        // distance as the shift, so any subset estimate stays close to it
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_cloud(&mut rng, 300);
        let yp = y.map(|p| [p[0] + 3.0, p[1], p[2]]);
        let cfg = MetricConfig {
            emd_limit: 100,
            emd_max_points: 120,
            ..MetricConfig::default()
        };
        let capped = evaluate(&yp, &y, None, &cfg, &mut rng).unwrap();
        assert_eq!(capped.emd_method, EmdMethod::Sinkhorn);
        assert!(capped.notes.iter().any(|n| n.contains("120- and 120-point")), "{:?}", capped.notes);
        assert!((capped.emd - 3.0).abs() < 0.05 * 3.0, "{}", capped.emd);
        let full = evaluate(&yp, &y, None, &MetricConfig::default(), &mut rng).unwrap();
        assert_eq!(full.emd_method, EmdMethod::Exact);
        assert!((full.emd - 3.0).abs() < 1e-9);
    }

}
