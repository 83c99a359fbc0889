use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use metapu_core::data::DatasetConfig;
use metapu_core::metrics::MetricConfig;
use metapu_core::net::NetConfig;
use metapu_core::train::TrainConfig;

use crate::exit;
use crate::Common;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Tiny,
    Paper,
}

impl Profile {
    pub fn net(self) -> NetConfig {
        match self {
            Profile::Tiny => NetConfig::tiny(),
            Profile::Paper => NetConfig::paper(),
        }
    }
}

/// Every setting a command may consult, fully resolved before it runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub metrics: MetricConfig,
    pub seed: u64,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    fn defaults(profile: Profile) -> RunConfig {
        let net = profile.net();
        let train = TrainConfig {
            r_max: Some(net.r_max as f64),
            ..TrainConfig::default()
        };
        RunConfig {
            net,
            train,
            dataset: DatasetConfig::default(),
            metrics: MetricConfig::default(),
            seed: 0,
        }
    }

    /// Profile defaults, overlaid with the config file, overlaid with the
    /// common flags. The seed is propagated to every section.
    pub fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
        let mut value = serde_json::to_value(RunConfig::defaults(common.profile))?;
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let over: Value = serde_json::from_str(&text)
                .map_err(|e| exit::usage(format!("{}: {e}", path.display())))?;
            if !over.is_object() {
                return Err(exit::usage(format!("{}: config must be a JSON object", path.display())));
            }
            merge(&mut value, over);
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| exit::usage(format!("invalid config: {e}")))?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        cfg.dataset.seed = cfg.seed;
        cfg.net
            .validate()
            .map_err(|e| exit::usage(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_scales(text: &str) -> anyhow::Result<Vec<f64>> {
    let scales = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| exit::usage(format!("bad scale {s:?} in {text:?}")))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if scales.is_empty() {
        return Err(exit::usage("no scales given"));
    }
    Ok(scales)
}

/// Input size used at test time for scale `r`: 5000 up to 4, 4000 up to 6,
/// 3000 up to 12, 2500 beyond.
pub fn default_input_points(r: f64) -> usize {
    if r <= 4.0 {
        5000
    } else if r <= 6.0 {
        4000
    } else if r <= 12.0 {
        3000
    } else {
        2500
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
