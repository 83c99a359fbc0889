use std::collections::BTreeMap;

use rand::Rng;

use super::{NetConfig, NetError};
use crate::tensor::Tensor;

/// Plain parameter array, shareable across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        ParamTensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ParamTensor) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Sets every parameter to zero.
    pub fn zeroed(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), ParamTensor::zeros(&v.shape)))
                .collect(),
        }
    }

    /// Checks names and shapes against the inventory for `config`.
    pub fn check(&self, config: &NetConfig) -> Result<(), NetError> {
        let expected = param_shapes(config);
        for (name, shape) in &expected {
            let found = self
                .get(name)
                .ok_or_else(|| NetError::MissingParam(name.clone()))?;
            if &found.shape != shape {
                return Err(NetError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: found.shape.clone(),
                });
            }
        }
        if expected.len() != self.len() {
            let known: std::collections::HashSet<_> = expected.iter().map(|(n, _)| n).collect();
            let extra = self.names().find(|n| !known.contains(n)).cloned().unwrap_or_default();
            return Err(NetError::UnexpectedParam(extra));
        }
        Ok(())
    }

    /// Creates one graph leaf per parameter.
    pub fn bind(&self, trainable: bool) -> BoundParams {
        let make = if trainable { Tensor::param } else { Tensor::new };
        BoundParams {
            tensors: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), make(&v.shape, v.data.clone()).expect("valid shape")))
                .collect(),
        }
    }
}

/// Parameters bound as leaves of one differentiation graph.
pub struct BoundParams {
    tensors: BTreeMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Tensor, NetError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Gradients accumulated in the leaves, in name order. Parameters that
    /// were not reached get a zero gradient.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .map(|(k, t)| (k.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
            .collect()
    }
}

pub(crate) fn block_prefix(b: usize) -> String {
    format!("block.{b:02}")
}

/// Prefix of one weight-predicting subnetwork (`branch` is `center` or
/// `neighbor`).
pub(crate) fn meta_prefix(b: usize, branch: &str) -> String {
    format!("{}.meta.{branch}", block_prefix(b))
}

/// Whether a parameter belongs to a weight-predicting subnetwork.
pub fn is_meta_param(name: &str) -> bool {
    name.contains(".meta.")
}

/// Every parameter name and shape for `config`, without allocating data.
/// Weights are stored `[fan_in, fan_out]`.
pub fn param_shapes(config: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let c = config.channels;
    let mut out = Vec::new();
    let dense = |out: &mut Vec<(String, Vec<usize>)>, name: String, i: usize, o: usize, bias: bool| {
        out.push((format!("{name}.weight"), vec![i, o]));
        if bias {
            out.push((format!("{name}.bias"), vec![o]));
        }
    };
    let mut width = 3;
    for l in 0..config.cnn_layers {
        dense(&mut out, format!("cnn.{l}"), width, c, true);
        width = c;
    }
    let sv = 2 * config.r_max;
    let w_len = c * c * config.kernel_size * config.kernel_size;
    for b in 1..=config.n_blocks {
        if b == config.meta_block_index {
            for branch in ["center", "neighbor"] {
                let p = meta_prefix(b, branch);
                dense(&mut out, format!("{p}.fc1"), sv, config.c_hidden, true);
                dense(&mut out, format!("{p}.fc2"), config.c_hidden, config.c_hidden, true);
                dense(&mut out, format!("{p}.fc3"), config.c_hidden, w_len, true);
                dense(&mut out, format!("{p}.fc4"), w_len, w_len, true);
                dense(&mut out, format!("{p}.fc_skip"), sv, w_len, true);
            }
        } else {
            let p = block_prefix(b);
            dense(&mut out, format!("{p}.center"), c, c, true);
            dense(&mut out, format!("{p}.neighbor"), c, c, false);
        }
    }
    dense(&mut out, "unpool.center".into(), c, c, true);
    dense(&mut out, "unpool.neighbor".into(), c, c, false);
    dense(&mut out, "unpool.out".into(), c, 3 * config.r_max, true);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero. Neighbor-sum branches
/// are further divided by `k` and the generated-weight heads by
/// `sqrt(channels)`, so activations keep their scale through the residual
/// stack. The offset layer starts 100x smaller, so an untrained network
/// returns near-copies of its input points.
pub fn init_params<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<ParamStore, NetError> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape) in param_shapes(config) {
        let mut t = ParamTensor::zeros(&shape);
        if shape.len() == 2 {
            let mut bound = 1.0 / (shape[0] as f64).sqrt();
            if name.ends_with("neighbor.weight") {
                bound /= config.k as f64;
            }
            if name.ends_with(".fc4.weight") || name.ends_with(".fc_skip.weight") {
                bound /= (config.channels as f64).sqrt();
            }
            if name == "unpool.out.weight" {
                bound *= 0.01;
            }
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        store.insert(name, t);
    }
    Ok(store)
}
