//! The scale-conditioned upsampling network.
//!
//! Pipeline: point CNN over k-NN neighborhoods, a stack of residual graph
//! convolution blocks (one of which receives its weights from two
//! weight-predicting subnetworks fed with the encoded scale), an unpooling
//! block emitting `r_max` children per input point, and a farthest-point
//! head keeping `⌊R·n⌋` of them.
//!
//! The k-NN graph is built once from the input coordinates and shared by
//! every block.

mod config;
mod params;

pub use config::{make_all_r_vector, make_scale_vector, output_count, NetConfig, ScaleEncoding, ScaleVector};
pub use params::{init_params, is_meta_param, param_shapes, BoundParams, ParamStore, ParamTensor};

use params::{block_prefix, meta_prefix};
use thiserror::Error;

use crate::geom::{self, GeomError, KnnGraph, PointCloud};
use crate::tensor::{Reduce, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("scale factor {r} outside (1, {r_max}]")]
    ScaleOutOfRange { r: f64, r_max: usize },
    #[error("input has {n} points but needs more than k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("output index {index} out of range for {len} outputs")]
    InvalidIndex { index: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, NetError>;

fn dense(x: &Tensor, params: &BoundParams, name: &str, bias: bool) -> Result<Tensor> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = if bias {
        Some(params.get(&format!("{name}.bias"))?)
    } else {
        None
    };
    Ok(x.linear(w, b)?)
}

/// Emits a `[c_in×c_out]` convolution weight from the scale vector through
/// four stacked FC layers plus a skip FC layer.
pub fn meta_subnet_forward(
    sv: &ScaleVector,
    params: &BoundParams,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) -> Result<Tensor> {
    let input = Tensor::new(&[1, sv.len()], sv.entries().to_vec())?;
    let h = dense(&input, params, &format!("{prefix}.fc1"), true)?.relu();
    let h = dense(&h, params, &format!("{prefix}.fc2"), true)?.relu();
    let h = dense(&h, params, &format!("{prefix}.fc3"), true)?.relu();
    let w0 = dense(&h, params, &format!("{prefix}.fc4"), true)?;
    let skip = dense(&input, params, &format!("{prefix}.fc_skip"), true)?;
    Ok(w0.add(&skip)?.reshape(&[c_in, c_out])?)
}

/// Per-point features from the raw coordinates of each point's neighbors,
/// max-pooled over the neighborhood: `[n×3] -> [n×c]`.
pub fn point_cnn_forward(
    x: &Tensor,
    graph: &KnnGraph,
    params: &BoundParams,
    config: &NetConfig,
) -> Result<Tensor> {
    let n = graph.len();
    let k = graph.k();
    let mut h = x.group_gather(graph.table(), k)?.reshape(&[n * k, 3])?;
    for l in 0..config.cnn_layers {
        h = dense(&h, params, &format!("cnn.{l}"), true)?.relu();
    }
    let c = h.shape()[1];
    Ok(h.reshape(&[n, k, c])?.reduce(1, Reduce::Max)?)
}

fn neighbor_sum(f: &Tensor, graph: &KnnGraph) -> Result<Tensor> {
    Ok(f.group_gather(graph.table(), graph.k())?.reduce(1, Reduce::Sum)?)
}

/// Residual graph convolution:
/// `relu(W_c·f_p + b + W_n·Σ_{q∈N(p)} f_q) + f_p`.
pub fn rgc_forward(f: &Tensor, graph: &KnnGraph, params: &BoundParams, prefix: &str) -> Result<Tensor> {
    let center = dense(f, params, &format!("{prefix}.center"), true)?;
    let neigh = dense(&neighbor_sum(f, graph)?, params, &format!("{prefix}.neighbor"), false)?;
    Ok(center.add(&neigh)?.relu().add(f)?)
}

/// Same dataflow as [`rgc_forward`], with both branch weights generated from
/// the scale vector.
pub fn meta_rgc_forward(
    f: &Tensor,
    graph: &KnnGraph,
    sv: &ScaleVector,
    params: &BoundParams,
    block: usize,
) -> Result<Tensor> {
    let c = f.shape()[1];
    let w_center = meta_subnet_forward(sv, params, &meta_prefix(block, "center"), c, c)?;
    let w_neigh = meta_subnet_forward(sv, params, &meta_prefix(block, "neighbor"), c, c)?;
    let center = f.linear(&w_center, None)?;
    let neigh = neighbor_sum(f, graph)?.linear(&w_neigh, None)?;
    Ok(center.add(&neigh)?.relu().add(f)?)
}

/// Maps features to `r_max` coordinate offsets per point and adds them to
/// the input point. Row `i·r_max + j` of the result is child `j` of input
/// point `i`.
pub fn unpool_forward(
    f: &Tensor,
    x: &Tensor,
    graph: &KnnGraph,
    params: &BoundParams,
    r_max: usize,
) -> Result<Tensor> {
    let n = graph.len();
    let center = dense(f, params, "unpool.center", true)?;
    let neigh = dense(&neighbor_sum(f, graph)?, params, "unpool.neighbor", false)?;
    let h = center.add(&neigh)?.relu();
    let offsets = dense(&h, params, "unpool.out", true)?.reshape(&[n, r_max, 3])?;
    let base = x.reshape(&[n, 1, 3])?;
    Ok(offsets.add(&base)?.reshape(&[n * r_max, 3])?)
}

/// Network up to (and including) unpooling: `[n×3] -> [(n·r_max)×3]`.
pub fn dense_forward(
    x: &Tensor,
    graph: &KnnGraph,
    sv: &ScaleVector,
    params: &BoundParams,
    config: &NetConfig,
) -> Result<Tensor> {
    let mut f = point_cnn_forward(x, graph, params, config)?;
    for b in 1..=config.n_blocks {
        f = if b == config.meta_block_index {
            meta_rgc_forward(&f, graph, sv, params, b)?
        } else {
            rgc_forward(&f, graph, params, &block_prefix(b))?
        };
    }
    unpool_forward(&f, x, graph, params, config.r_max)
}

/// Result of a full forward pass.
pub struct Upsampled {
    /// `⌊R·n⌋×3` output points.
    pub points: Tensor,
    /// All `n·r_max` children before farthest-point selection.
    pub dense: Tensor,
    /// Rows of `dense` kept by the farthest-point head.
    pub selected: Vec<usize>,
}

impl Upsampled {
    pub fn cloud(&self) -> PointCloud {
        PointCloud::from_flat(self.points.data()).expect("finite network output")
    }
}

fn check_input(x: &PointCloud, config: &NetConfig) -> Result<()> {
    if x.len() <= config.k {
        return Err(NetError::TooFewPoints {
            n: x.len(),
            k: config.k,
        });
    }
    Ok(())
}

/// Upsamples `x` by `r`. `meta_scale`, when given, replaces `r` as the input
/// of the weight-predicting subnetworks while the head still keeps `⌊r·n⌋`
/// points.
pub fn metapu_forward(
    x: &PointCloud,
    r: f64,
    meta_scale: Option<f64>,
    params: &BoundParams,
    config: &NetConfig,
) -> Result<Upsampled> {
    config.check_scale(r)?;
    check_input(x, config)?;
    let sv = config.encode_scale(meta_scale.unwrap_or(r))?;
    let graph = geom::build_knn(x, config.k)?;
    let xt = Tensor::new(&[x.len(), 3], x.to_flat())?;
    let dense = dense_forward(&xt, &graph, &sv, params, config)?;
    let coords = PointCloud::from_flat(dense.data())?;
    // the head starts from child 0 of input point 0
    let selected = geom::farthest_point_sample(coords.points(), output_count(r, x.len()), 0)?;
    let points = dense.gather_rows(&selected)?;
    Ok(Upsampled {
        points,
        dense,
        selected,
    })
}

/// Inference-only convenience wrapper around [`metapu_forward`].
pub fn upsample(
    x: &PointCloud,
    r: f64,
    meta_scale: Option<f64>,
    store: &ParamStore,
    config: &NetConfig,
) -> Result<PointCloud> {
    let params = store.bind(false);
    Ok(metapu_forward(x, r, meta_scale, &params, config)?.cloud())
}

/// Input points whose coordinate gradient, back-propagated from one dense
/// output point, exceeds `threshold` times the largest such gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceptiveField {
    /// Ascending input indices inside the field.
    pub indices: Vec<usize>,
    /// Gradient magnitude for every input point.
    pub magnitudes: Vec<f64>,
    pub threshold: f64,
}

impl ReceptiveField {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Field membership at a different relative threshold.
    pub fn at_threshold(&self, threshold: f64) -> Vec<usize> {
        field_indices(&self.magnitudes, threshold)
    }
}

fn field_indices(magnitudes: &[f64], threshold: f64) -> Vec<usize> {
    let max = magnitudes.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..magnitudes.len())
        .filter(|&i| magnitudes[i] > threshold * max)
        .collect()
}

/// Receptive field of dense output `output_index` with the farthest-point
/// head bypassed.
pub fn receptive_field(
    x: &PointCloud,
    r: f64,
    store: &ParamStore,
    config: &NetConfig,
    output_index: usize,
    threshold: f64,
) -> Result<ReceptiveField> {
    config.check_scale(r)?;
    check_input(x, config)?;
    let len = x.len() * config.r_max;
    if output_index >= len {
        return Err(NetError::InvalidIndex {
            index: output_index,
            len,
        });
    }
    let sv = config.encode_scale(r)?;
    let graph = geom::build_knn(x, config.k)?;
    let params = store.bind(false);
    let xt = Tensor::param(&[x.len(), 3], x.to_flat())?;
    let dense = dense_forward(&xt, &graph, &sv, &params, config)?;
    dense.gather_rows(&[output_index])?.sum_all().backward()?;
    let grad = xt.grad().unwrap_or_else(|| vec![0.0; x.len() * 3]);
    let magnitudes: Vec<f64> = grad
        .chunks(3)
        .map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
        .collect();
    Ok(ReceptiveField {
        indices: field_indices(&magnitudes, threshold),
        magnitudes,
        threshold,
    })
}

/// Dense output index closest to input point `input_index`.
pub fn closest_dense_output(
    x: &PointCloud,
    r: f64,
    store: &ParamStore,
    config: &NetConfig,
    input_index: usize,
) -> Result<usize> {
    config.check_scale(r)?;
    check_input(x, config)?;
    if input_index >= x.len() {
        return Err(NetError::InvalidIndex {
            index: input_index,
            len: x.len(),
        });
    }
    let sv = config.encode_scale(r)?;
    let graph = geom::build_knn(x, config.k)?;
    let params = store.bind(false);
    let xt = Tensor::new(&[x.len(), 3], x.to_flat())?;
    let dense = PointCloud::from_flat(dense_forward(&xt, &graph, &sv, &params, config)?.data())?;
    let target = x.points()[input_index];
    Ok(geom::KdTree::new(dense.points())
        .nearest(&target)
        .map(|(_, i)| i)
        .expect("non-empty output"))
}
