use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metapu_core::data::{input_count, make_training_pair};
use metapu_core::geom::{
    build_knn, dist, dist2, farthest_point_sample, normalize_unit_sphere, Point3, PointCloud,
};
use metapu_core::loss::{repulsion_loss, sinkhorn_divergence, uniform_loss, SinkhornConfig};
use metapu_core::metrics::{chamfer, directed_nn_distance, emd_exact, fscore};
use metapu_core::net::{
    dense_forward, init_params, metapu_forward, output_count, NetConfig, ParamStore,
};
use metapu_core::tensor::Tensor;
use metapu_core::train::cosine_lr;

fn point() -> impl Strategy<Value = Point3> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn points(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), lo..hi)
}

fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
    let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
            }
        }
        m
    };
    mul(mul(rz, ry), rx)
}

fn rigid(pts: &[Point3], m: &[[f64; 3]; 3], t: &Point3) -> Vec<Point3> {
    pts.iter()
        .map(|p| [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + t[i]))
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn covering_radius(pts: &[Point3], chosen: &[usize]) -> f64 {
    pts.iter()
        .map(|p| chosen.iter().map(|&c| dist(p, &pts[c])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn small_net(k: usize) -> NetConfig {
    NetConfig {
        k,
        channels: 8,
        c_hidden: 8,
        n_blocks: 2,
        ..NetConfig::tiny()
    }
}

fn sorted(mut pts: Vec<f64>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = pts.chunks_mut(3).map(|c| c.to_vec()).collect();
    rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows
}

fn dense_of(x: &PointCloud, r: f64, store: &ParamStore, cfg: &NetConfig) -> Vec<f64> {
    let graph = build_knn(x, cfg.k).unwrap();
    let xt = Tensor::new(&[x.len(), 3], x.to_flat()).unwrap();
    let sv = cfg.encode_scale(r).unwrap();
    dense_forward(&xt, &graph, &sv, &store.bind(false), cfg).unwrap().data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_rows_equal_brute_force(pts in points(3, 40), k in 1usize..8) {
        prop_assume!(k < pts.len());
        let graph = build_knn(&PointCloud::new(pts.clone()).unwrap(), k).unwrap();
        for i in 0..pts.len() {
            let mut others: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist2(&pts[i], &pts[a]).total_cmp(&dist2(&pts[i], &pts[b])).then(a.cmp(&b)));
            prop_assert_eq!(graph.row(i), &others[..k]);
        }
    }

    #[test]
    fn normalized_cloud_touches_unit_sphere(pts in points(2, 50), s in 0.01..100.0f64) {
        let scaled: Vec<Point3> = pts.iter().map(|p| p.map(|v| v * s + 3.0)).collect();
        let (n, _, _) = normalize_unit_sphere(&PointCloud::new(scaled).unwrap());
        let max = n.points().iter().map(|p| dist(p, &[0.0; 3])).fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() <= 1e-12, "max norm {}", max);
    }

    #[test]
    fn fps_covers_within_twice_optimal(pts in points(2, 11), m_frac in 0.0..1.0f64) {
        let n = pts.len();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let fps = farthest_point_sample(&pts, m, 0).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m {
                let chosen: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
                best = best.min(covering_radius(&pts, &chosen));
            }
        }
        prop_assert!(covering_radius(&pts, &fps) <= 2.0 * best + 1e-12);
    }

    #[test]
    fn metrics_symmetric_and_rigid_invariant(
        a in points(2, 8), b in points(2, 8),
        angles in [0.0..6.3f64, 0.0..6.3f64, 0.0..6.3f64], shift in point(),
    ) {
        let m = rotation(angles[0], angles[1], angles[2]);
        let (ca, cb) = (PointCloud::new(a.clone()).unwrap(), PointCloud::new(b.clone()).unwrap());
        let (ra, rb) = (PointCloud::new(rigid(&a, &m, &shift)).unwrap(), PointCloud::new(rigid(&b, &m, &shift)).unwrap());
        prop_assert_eq!(chamfer(&ca, &cb), chamfer(&cb, &ca));
        prop_assert!(rel(chamfer(&ca, &cb), chamfer(&ra, &rb)) < 1e-9);
        prop_assert!((fscore(&ca, &cb, 0.5).unwrap() - fscore(&ra, &rb, 0.5).unwrap()).abs() < 1e-12);
        if a.len() == b.len() {
            let e = emd_exact(&ca, &cb).unwrap();
            prop_assert!(rel(e, emd_exact(&cb, &ca).unwrap()) < 1e-12);
            prop_assert!(rel(e, emd_exact(&ra, &rb).unwrap()) < 1e-9);
            let relaxed = directed_nn_distance(&ca, &cb).max(directed_nn_distance(&cb, &ca));
            prop_assert!(e >= relaxed - 1e-12);
        }
    }

    #[test]
    fn losses_rotation_invariant(
        y in points(4, 12), yp in points(4, 12),
        angles in [0.0..6.3f64, 0.0..6.3f64, 0.0..6.3f64],
    ) {
        let m = rotation(angles[0], angles[1], angles[2]);
        let (ry, ryp) = (rigid(&y, &m, &[0.0; 3]), rigid(&yp, &m, &[0.0; 3]));
        let small = |p: &[Point3]| p.iter().map(|q| q.map(|v| v * 0.05)).collect::<Vec<_>>();
        let rep = repulsion_loss(&small(&yp), 2, 0.03).unwrap().value;
        prop_assert!(rel(rep, repulsion_loss(&small(&ryp), 2, 0.03).unwrap().value) < 1e-9);
        let uni = uniform_loss(&yp, 2, 0.8, 0.2).unwrap().value;
        prop_assert!(rel(uni, uniform_loss(&ryp, 2, 0.8, 0.2).unwrap().value) < 1e-9);
        let cfg = SinkhornConfig::default();
        let div = sinkhorn_divergence(&y, &yp, &cfg).value;
        prop_assert!(rel(div, sinkhorn_divergence(&ry, &ryp, &cfg).value) < 1e-9);
    }

    #[test]
    fn learning_rate_never_below_floor(step in 0u64..2000, total in 1u64..2000, init in 1e-5..1e-2f64) {
        let floor = 1e-5;
        prop_assert!(cosine_lr(step, total, init.max(floor), floor) >= floor);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_pair_counts(tenths in 11usize..=40, n_max in 24usize..80, seed in 0u64..1000) {
        let r = tenths as f64 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<Point3> = (0..2 * n_max)
            .map(|i| { let t = i as f64 * 0.37; [t.sin(), t.cos(), (i as f64 * 0.011).fract()] })
            .collect();
        let pair = make_training_pair(&PointCloud::new(dense).unwrap(), r, n_max, "p", &mut rng).unwrap();
        let n = 10 * n_max / tenths;
        prop_assert_eq!(pair.input.len(), n);
        prop_assert_eq!(input_count(r, n_max), n);
        prop_assert_eq!(pair.target.len(), tenths * n / 10);
    }

    #[test]
    fn forward_cardinality(tenths in 11usize..=40, pts in points(9, 40), seed in 0u64..100) {
        let cfg = small_net(8);
        let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let r = tenths as f64 / 10.0;
        let out = metapu_forward(&PointCloud::new(pts.clone()).unwrap(), r, None, &store.bind(false), &cfg).unwrap();
        prop_assert_eq!(out.points.shape(), &[tenths * pts.len() / 10, 3][..]);
        prop_assert_eq!(output_count(r, pts.len()), tenths * pts.len() / 10);
    }

    #[test]
    fn permutation_equivariant_as_point_set(pts in points(10, 30), seed in 0u64..100, rot in 1usize..9) {
        let cfg = small_net(6);
        let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = PointCloud::new(pts.clone()).unwrap();
        let mut shuffled = pts.clone();
        shuffled.rotate_left(rot % pts.len());
        shuffled.reverse();
        let y = PointCloud::new(shuffled).unwrap();
        let (a, b) = (sorted(dense_of(&x, 3.0, &store, &cfg)), sorted(dense_of(&y, 3.0, &store, &cfg)));
        for (p, q) in a.iter().zip(&b) {
            for (u, v) in p.iter().zip(q) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
        // at R = r_max the head keeps every child
        let full = |c: &PointCloud| {
            sorted(metapu_forward(c, 4.0, None, &store.bind(false), &cfg).unwrap().points.data().to_vec())
        };
        prop_assert_eq!(full(&x), full(&y));
    }

    #[test]
    fn scale_vector_reaches_output(pts in points(10, 30), seed in 0u64..100) {
        let cfg = small_net(6);
        let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = PointCloud::new(pts).unwrap();
        let (a, b) = (dense_of(&x, 2.0, &store, &cfg), dense_of(&x, 4.0, &store, &cfg));
        let diff = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(diff > 1e-9);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = NetConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let store = init_params(&cfg, &mut rng).unwrap();
    let pts: Vec<Point3> = (0..40).map(|i| { let t = i as f64 * 0.7; [t.sin(), t.cos(), (t * 0.3).sin()] }).collect();
    let bound = store.bind(true);
    let out = metapu_forward(&PointCloud::new(pts).unwrap(), 2.5, None, &bound, &cfg).unwrap();
    let w: Vec<f64> = (0..out.points.len()).map(|i| (i as f64 * 1.3).sin()).collect();
    out.points.mul(&Tensor::new(out.points.shape(), w).unwrap()).unwrap().sum_all().backward().unwrap();
    for (name, g) in bound.grads() {
        assert!(g.iter().any(|&v| v != 0.0), "{name} has a zero gradient");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let cfg = NetConfig::tiny();
    let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let pts: Vec<Point3> = (0..30).map(|i| { let t = i as f64 * 0.9; [t.cos(), (t * 1.7).sin(), t.sin()] }).collect();
    let x = PointCloud::new(pts).unwrap();
    let run = || metapu_forward(&x, 3.3, None, &store.bind(false), &cfg).unwrap().points.data().to_vec();
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
}
