//! Arbitrary-scale point cloud upsampling.
//!
//! A graph-convolutional upsampler whose central block takes its convolution
//! weights from a small fully connected network conditioned on the requested
//! scale factor, so one model serves every factor in `(1, R_max]`, including
//! non-integer ones.
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation
//! - [`geom`]: point clouds, meshes, neighbor queries and sampling
//! - [`net`]: the upsampling network and its parameters
//! - [`loss`]: repulsion, uniformity and Sinkhorn reconstruction terms
//! - [`metrics`]: CD, EMD, F-score, NUC and point-to-mesh deviation
//! - [`data`]: dataset construction, augmentation and file formats
//! - [`train`]: variable-scale training, Adam, schedule and checkpoints

pub mod data;
pub mod geom;
pub mod tensor;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod train;
