use serde::{Deserialize, Serialize};

use super::NetError;

/// Slack used when turning real scale factors into counts, so that values
/// such as `2.3 * 10` that land a hair below an integer still floor to it.
pub(crate) const SCALE_SLACK: f64 = 1e-9;

/// How the scale factor is presented to the weight-predicting subnetworks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEncoding {
    /// Pairs `{max(0, R - i), R}` for `i = 1..=ceil(R)`, padded with `{-1, -1}`.
    #[default]
    LocationPairs,
    /// Every entry equals `R` (ablation).
    AllR,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Neighbors per point in the shared k-NN graph.
    pub k: usize,
    /// Feature channels carried through the graph blocks.
    pub channels: usize,
    pub n_blocks: usize,
    /// 1-based position of the scale-conditioned block.
    pub meta_block_index: usize,
    pub r_max: usize,
    pub c_hidden: usize,
    /// Convolution kernel size; only point-wise (1) kernels are supported.
    pub kernel_size: usize,
    pub cnn_layers: usize,
    pub scale_encoding: ScaleEncoding,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::paper()
    }
}

impl NetConfig {
    /// Full-size configuration: 22 blocks of 128 channels, meta block second,
    /// scales up to 16.
    pub fn paper() -> Self {
        NetConfig {
            k: 8,
            channels: 128,
            n_blocks: 22,
            meta_block_index: 2,
            r_max: 16,
            c_hidden: 128,
            kernel_size: 1,
            cnn_layers: 3,
            scale_encoding: ScaleEncoding::LocationPairs,
        }
    }

    /// Desk-scale configuration used by the test suite.
    pub fn tiny() -> Self {
        NetConfig {
            k: 8,
            channels: 32,
            n_blocks: 4,
            meta_block_index: 2,
            r_max: 4,
            c_hidden: 32,
            kernel_size: 1,
            cnn_layers: 3,
            scale_encoding: ScaleEncoding::LocationPairs,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidConfig(msg));
        if self.k == 0 || self.channels == 0 || self.c_hidden == 0 || self.cnn_layers == 0 {
            return bad("k, channels, c_hidden and cnn_layers must be positive".into());
        }
        if self.meta_block_index < 1 || self.meta_block_index > self.n_blocks {
            return bad(format!(
                "meta_block_index {} outside 1..={}",
                self.meta_block_index, self.n_blocks
            ));
        }
        if self.r_max < 2 {
            return bad(format!("r_max must be at least 2, got {}", self.r_max));
        }
        if self.kernel_size != 1 {
            return bad(format!(
                "kernel_size {} unsupported; graph convolutions are point-wise",
                self.kernel_size
            ));
        }
        Ok(())
    }

    pub fn encode_scale(&self, r: f64) -> Result<ScaleVector, NetError> {
        match self.scale_encoding {
            ScaleEncoding::LocationPairs => make_scale_vector(r, self.r_max),
            ScaleEncoding::AllR => make_all_r_vector(r, self.r_max),
        }
    }

    pub fn check_scale(&self, r: f64) -> Result<(), NetError> {
        check_scale(r, self.r_max)
    }
}

fn check_scale(r: f64, r_max: usize) -> Result<(), NetError> {
    if !(r.is_finite() && r > 1.0 && r <= r_max as f64 + SCALE_SLACK) {
        return Err(NetError::ScaleOutOfRange { r, r_max });
    }
    Ok(())
}

/// `⌊r·n⌋`, tolerant of representation error in `r`.
pub fn output_count(r: f64, n: usize) -> usize {
    (r * n as f64 + SCALE_SLACK).floor() as usize
}

/// Encoded scale factor of length `2·r_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleVector {
    entries: Vec<f64>,
}

impl ScaleVector {
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn make_scale_vector(r: f64, r_max: usize) -> Result<ScaleVector, NetError> {
    check_scale(r, r_max)?;
    let pairs = ((r - SCALE_SLACK).ceil() as usize).min(r_max);
    let mut entries = Vec::with_capacity(2 * r_max);
    for i in 1..=pairs {
        entries.push((r - i as f64).max(0.0));
        entries.push(r);
    }
    entries.resize(2 * r_max, -1.0);
    Ok(ScaleVector { entries })
}

pub fn make_all_r_vector(r: f64, r_max: usize) -> Result<ScaleVector, NetError> {
    check_scale(r, r_max)?;
    Ok(ScaleVector {
        entries: vec![r; 2 * r_max],
    })
}
