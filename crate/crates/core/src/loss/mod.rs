//! Training objective: debiased Sinkhorn reconstruction plus uniformity and
//! repulsion regularizers.
//!
//! Each term returns its value together with a closed-form gradient with
//! respect to the predicted points; [`compound_loss_tensor`] splices the
//! combined gradient into a differentiation graph. Discrete choices (k-NN
//! sets, farthest-point seeds, ball membership) are held fixed when
//! differentiating.

mod sinkhorn;

pub use sinkhorn::{
    sinkhorn_divergence, sinkhorn_linear_cost, sinkhorn_ot, sinkhorn_self_ot, solve as sinkhorn_solve, Divergence, OtResult,
    OtSolution, SinkhornConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{dist, farthest_point_sample, knn_table, GeomError, KdTree, Point3, PointCloud};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("repulsion needs k < point count, got k = {k} for {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid loss parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// A scalar loss with its gradient per predicted point.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Vec<Point3>,
}

impl LossTerm {
    fn zero(n: usize) -> Self {
        LossTerm {
            value: 0.0,
            grad: vec![[0.0; 3]; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rec: f64,
    pub uni: f64,
    pub rep: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 1.0,
            uni: 0.001,
            rep: 0.005,
        }
    }
}

/// Which discrepancy plays the reconstruction role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    #[default]
    Sinkhorn,
    /// Chamfer distance, for the loss ablation.
    Chamfer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformConfig {
    /// Expected fraction of points per ball; the ball radius is `√p`.
    pub p: f64,
    /// Seed count is `max(min_seeds, ⌊N / points_per_seed⌋)`, capped at `N`.
    pub min_seeds: usize,
    pub points_per_seed: usize,
}

impl Default for UniformConfig {
    fn default() -> Self {
        UniformConfig {
            p: 0.01,
            min_seeds: 8,
            points_per_seed: 50,
        }
    }
}

impl UniformConfig {
    pub fn seeds_for(&self, n: usize) -> usize {
        self.min_seeds.max(n / self.points_per_seed.max(1)).min(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub reconstruction: Reconstruction,
    pub sinkhorn: SinkhornConfig,
    pub repulsion_k: usize,
    pub repulsion_h: f64,
    pub uniform: UniformConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            reconstruction: Reconstruction::Sinkhorn,
            sinkhorn: SinkhornConfig::default(),
            repulsion_k: 4,
            repulsion_h: 0.03,
            uniform: UniformConfig::default(),
        }
    }
}

/// Sum over each point's `k` nearest neighbors of `η(r)·w(r)` with
/// `η(r) = −r` and `w(r) = exp(−r²/h²)`. Never positive.
pub fn repulsion_loss(points: &[Point3], k: usize, h: f64) -> Result<LossTerm> {
    if k >= points.len() {
        return Err(LossError::KTooLarge { k, n: points.len() });
    }
    if h <= 0.0 {
        return Err(LossError::InvalidParameter(format!("h must be positive, got {h}")));
    }
    let table = knn_table(points, k)?;
    let h2 = h * h;
    let mut term = LossTerm::zero(points.len());
    for (i, row) in table.chunks(k).enumerate() {
        for &j in row {
            let r = dist(&points[i], &points[j]);
            let w = (-r * r / h2).exp();
            term.value -= r * w;
            if r > 0.0 {
                let dphi = w * (2.0 * r * r / h2 - 1.0);
                for a in 0..3 {
                    let d = dphi * (points[i][a] - points[j][a]) / r;
                    term.grad[i][a] += d;
                    term.grad[j][a] -= d;
                }
            }
        }
    }
    Ok(term)
}

/// Uniformity over `seeds` farthest-point balls of radius `r_d`: each ball
/// contributes `U_imbalance · U_clutter`, with the imbalance factor treated
/// as a constant weight. `p` is the expected fraction of points per ball.
/// Balls holding fewer than two points contribute zero.
pub fn uniform_loss(points: &[Point3], seeds: usize, r_d: f64, p: f64) -> Result<LossTerm> {
    if !(p > 0.0 && p < 1.0) {
        return Err(LossError::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
    }
    if r_d <= 0.0 {
        return Err(LossError::InvalidParameter(format!("ball radius must be positive, got {r_d}")));
    }
    let n = points.len();
    let seeds = farthest_point_sample(points, seeds.clamp(1, n), 0)?;
    let expected_count = n as f64 * p;
    let tree = KdTree::new(points);
    let mut term = LossTerm::zero(n);
    for &s in &seeds {
        let ball = tree.within(&points[s], r_d);
        if ball.len() < 2 {
            continue;
        }
        let count = ball.len() as f64;
        let imbalance = (count - expected_count).powi(2) / expected_count;
        if imbalance == 0.0 {
            continue;
        }
        let expected_dist = (2.0 * std::f64::consts::PI * r_d * r_d / (count * 3f64.sqrt())).sqrt();
        for &i in &ball {
            // nearest other member of the ball, ties by lower index
            let (d, j) = ball
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (dist(&points[i], &points[j]), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            let diff = d - expected_dist;
            term.value += imbalance * diff * diff / expected_dist;
            if d > 0.0 {
                let coef = imbalance * 2.0 * diff / expected_dist / d;
                for a in 0..3 {
                    let g = coef * (points[i][a] - points[j][a]);
                    term.grad[i][a] += g;
                    term.grad[j][a] -= g;
                }
            }
        }
    }
    Ok(term)
}

/// Chamfer distance with its gradient with respect to `yp`.
pub fn chamfer_loss(y: &[Point3], yp: &[Point3]) -> LossTerm {
    let mut term = LossTerm::zero(yp.len());
    let ty = KdTree::new(y);
    let tp = KdTree::new(yp);
    let inv_p = 1.0 / yp.len() as f64;
    let inv_y = 1.0 / y.len() as f64;
    for (i, p) in yp.iter().enumerate() {
        let (d2, j) = ty.nearest(p).unwrap();
        term.value += d2 * inv_p;
        for a in 0..3 {
            term.grad[i][a] += 2.0 * inv_p * (p[a] - y[j][a]);
        }
    }
    for q in y {
        let (d2, i) = tp.nearest(q).unwrap();
        term.value += d2 * inv_y;
        for a in 0..3 {
            term.grad[i][a] += 2.0 * inv_y * (yp[i][a] - q[a]);
        }
    }
    term
}

/// Per-term values of one compound loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub uniform: f64,
    pub repulsion: f64,
    /// False when a Sinkhorn solve hit its iteration cap.
    pub converged: bool,
}

/// `λ_rec·L_rec + λ_uni·L_uni + λ_rep·L_rep` and its gradient with respect
/// to `yp`. Terms with zero weight are skipped.
pub fn compound_loss(y: &PointCloud, yp: &PointCloud, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<Point3>)> {
    let (y, yp) = (y.points(), yp.points());
    let w = cfg.weights;
    let mut grad = vec![[0.0; 3]; yp.len()];
    let mut out = LossBreakdown {
        converged: true,
        ..Default::default()
    };
    let mut accumulate = |g: &[Point3], weight: f64| {
        for (acc, gi) in grad.iter_mut().zip(g) {
            for a in 0..3 {
                acc[a] += weight * gi[a];
            }
        }
    };
    if w.rec != 0.0 {
        match cfg.reconstruction {
            Reconstruction::Sinkhorn => {
                let d = sinkhorn_divergence(y, yp, &cfg.sinkhorn);
                out.reconstruction = d.value;
                out.converged = d.converged;
                accumulate(&d.grad, w.rec);
            }
            Reconstruction::Chamfer => {
                let c = chamfer_loss(y, yp);
                out.reconstruction = c.value;
                accumulate(&c.grad, w.rec);
            }
        }
    }
    if w.uni != 0.0 {
        let u = uniform_loss(yp, cfg.uniform.seeds_for(yp.len()), cfg.uniform.p.sqrt(), cfg.uniform.p)?;
        out.uniform = u.value;
        accumulate(&u.grad, w.uni);
    }
    if w.rep != 0.0 {
        let r = repulsion_loss(yp, cfg.repulsion_k, cfg.repulsion_h)?;
        out.repulsion = r.value;
        accumulate(&r.grad, w.rep);
    }
    out.total = w.rec * out.reconstruction + w.uni * out.uniform + w.rep * out.repulsion;
    Ok((out, grad))
}

/// [`compound_loss`] as a scalar node of the graph that produced `yp`
/// (an `N×3` tensor).
pub fn compound_loss_tensor(y: &PointCloud, yp: &Tensor, cfg: &LossConfig) -> Result<(Tensor, LossBreakdown)> {
    let cloud = PointCloud::from_flat(yp.data())?;
    let (parts, grad) = compound_loss(y, &cloud, cfg)?;
    let flat: Vec<f64> = grad.into_iter().flatten().collect();
    Ok((yp.custom_scalar(parts.total, flat)?, parts))
}
