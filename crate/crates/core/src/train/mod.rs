//! Variable-scale training: every batch draws one scale factor, builds its
//! pairs at that scale, and takes one Adam step with two learning-rate
//! groups under a cosine schedule.
//!
//! All randomness of step `s` comes from a ChaCha8 generator seeded with the
//! run seed on stream `s`, so a run resumed from a checkpoint replays the
//! uninterrupted run exactly.

mod checkpoint;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{augment, input_count, make_training_pair, write_xyz, AugmentConfig, DataError, TrainingPair};
use crate::geom::{GeomError, PointCloud};
use crate::loss::{compound_loss_tensor, LossBreakdown, LossConfig, LossError};
use crate::net::{init_params, is_meta_param, metapu_forward, NetConfig, NetError, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("non-finite loss at step {step} (R = {r}, patches {sources:?}){}", dump.as_ref().map(|d| format!("; batch written to {}", d.display())).unwrap_or_default())]
    NonFiniteLoss {
        step: u64,
        r: f64,
        sources: Vec<String>,
        dump: Option<PathBuf>,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the weight-predicting subnetworks.
    pub lr_fc: f64,
    /// Learning rate of every other parameter.
    pub lr_other: f64,
    pub lr_floor: f64,
    /// Largest training scale; defaults to the network's `r_max`.
    pub r_max: Option<f64>,
    pub scale_stride: f64,
    /// Points per training pair before scaling: inputs hold `⌊n_max/R⌋`.
    pub n_max: usize,
    /// Overrides `epochs × batches_per_epoch` when set.
    pub max_steps: Option<u64>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    /// Draw each patch's input subset from a per-patch stream, so every
    /// visit sees the same sparse region instead of a fresh one.
    pub fixed_pairs: bool,
    pub seed: u64,
    /// Where to write the offending batch when the loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 18,
            lr_fc: 1e-3,
            lr_other: 1e-4,
            lr_floor: 1e-5,
            r_max: None,
            scale_stride: 0.1,
            n_max: 4096,
            max_steps: None,
            grad_clip: Some(5.0),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            fixed_pairs: false,
            seed: 0,
            dump_dir: None,
        }
    }
}

/// Scale set `{1 + stride, 1 + 2·stride, …, r_max}`.
pub fn scale_set(r_max: f64, stride: f64) -> Vec<f64> {
    let per_unit = (1.0 / stride).round() as u64;
    let count = ((r_max - 1.0) * per_unit as f64 + 1e-9).floor() as u64;
    (1..=count).map(|i| (per_unit + i) as f64 / per_unit as f64).collect()
}

/// `lr_floor + ½(lr_init − lr_floor)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_init: f64, lr_floor: f64) -> f64 {
    if total_steps == 0 {
        return lr_init;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_floor + 0.5 * (lr_init - lr_floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam moments for every parameter and the update count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rates of the two parameter groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrMap {
    pub fc: f64,
    pub other: f64,
}

impl LrMap {
    pub fn for_param(&self, name: &str) -> f64 {
        if is_meta_param(name) {
            self.fc
        } else {
            self.other
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, state: &mut AdamState, lr: LrMap) -> Result<()> {
    if let Some(name) = params.names().find(|n| !grads.contains_key(*n)) {
        return Err(TrainError::MissingGradient(name.clone()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let rate = lr.for_param(name);
        for i in 0..p.data.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data[i] -= rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    #[serde(rename = "R")]
    pub r: f64,
    pub loss: f64,
    pub rec: f64,
    pub uni: f64,
    pub rep: f64,
    pub lr_fc: f64,
    pub lr_other: f64,
    /// False when some Sinkhorn solve in the batch hit its iteration cap.
    pub converged: bool,
}

/// Loss and gradients of one pair under the current parameters.
fn pair_gradients(
    input: &PointCloud,
    target: &PointCloud,
    r: f64,
    params: &ParamStore,
    net: &NetConfig,
    loss: &LossConfig,
) -> Result<(LossBreakdown, BTreeMap<String, Vec<f64>>)> {
    let bound = params.bind(true);
    let out = metapu_forward(input, r, None, &bound, net)?;
    let (l, parts) = compound_loss_tensor(target, &out.points, loss)?;
    l.backward().map_err(NetError::from)?;
    Ok((parts, bound.grads()))
}

/// Training state over a fixed list of patches.
pub struct Trainer {
    net: NetConfig,
    cfg: TrainConfig,
    patches: Vec<(String, PointCloud)>,
    scales: Vec<f64>,
    params: ParamStore,
    adam: AdamState,
    step: u64,
}

impl Trainer {
    /// Fresh run with parameters drawn from the run seed.
    pub fn new(patches: Vec<(String, PointCloud)>, net: NetConfig, cfg: TrainConfig) -> Result<Trainer> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        let params = init_params(&net, &mut rng)?;
        Trainer::assemble(patches, net, cfg, params, AdamState::default(), 0)
    }

    /// Continues the run stored in `ckpt`.
    pub fn resume(patches: Vec<(String, PointCloud)>, ckpt: Checkpoint) -> Result<Trainer> {
        Trainer::assemble(patches, ckpt.net, ckpt.train, ckpt.params, ckpt.adam, ckpt.step)
    }

    fn assemble(
        patches: Vec<(String, PointCloud)>,
        net: NetConfig,
        cfg: TrainConfig,
        params: ParamStore,
        adam: AdamState,
        step: u64,
    ) -> Result<Trainer> {
        net.validate()?;
        params.check(&net)?;
        if patches.is_empty() {
            return Err(TrainError::InvalidConfig("no training patches".into()));
        }
        if cfg.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        let r_max = cfg.r_max.unwrap_or(net.r_max as f64);
        if r_max > net.r_max as f64 + 1e-9 {
            return Err(TrainError::InvalidConfig(format!(
                "training r_max {r_max} exceeds the network's r_max {}",
                net.r_max
            )));
        }
        let scales = scale_set(r_max, cfg.scale_stride);
        if scales.is_empty() {
            return Err(TrainError::InvalidConfig(format!("no scales in (1, {r_max}] at stride {}", cfg.scale_stride)));
        }
        let smallest = input_count(r_max, cfg.n_max);
        if smallest <= net.k {
            return Err(TrainError::InvalidConfig(format!(
                "n_max = {} leaves {smallest} input points at R = {r_max}; the k-NN graph needs more than k = {}",
                cfg.n_max, net.k
            )));
        }
        if let Some((name, p)) = patches.iter().find(|(_, p)| p.len() < 2 * cfg.n_max) {
            return Err(TrainError::InvalidConfig(format!(
                "patch {name} has {} points; n_max = {} needs {}",
                p.len(),
                cfg.n_max,
                2 * cfg.n_max
            )));
        }
        Ok(Trainer {
            net,
            cfg,
            patches,
            scales,
            params,
            adam,
            step,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.patches.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg
            .max_steps
            .unwrap_or(self.cfg.epochs as u64 * self.batches_per_epoch())
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn learning_rates(&self, step: u64) -> LrMap {
        let total = self.total_steps();
        LrMap {
            fc: cosine_lr(step, total, self.cfg.lr_fc, self.cfg.lr_floor),
            other: cosine_lr(step, total, self.cfg.lr_other, self.cfg.lr_floor),
        }
    }

    /// Patch indices of the batch at `step`: a per-epoch permutation cut
    /// into consecutive batches.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch();
        let (epoch, b) = (step / per_epoch, (step % per_epoch) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5eed_ba7c_4e5f_0001);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.shuffle(&mut rng);
        let lo = b * self.cfg.batch_size;
        let hi = (lo + self.cfg.batch_size).min(order.len());
        order[lo..hi].to_vec()
    }

    /// Scale factor drawn for `step`, reproducible from the seed alone.
    pub fn scale_for_step(&self, step: u64) -> f64 {
        self.step_rng(step).1
    }

    fn step_rng(&self, step: u64) -> (ChaCha8Rng, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step);
        let r = self.scales[rng.random_range(0..self.scales.len())];
        (rng, r)
    }

    /// Pair of patch `index` at scale `r` drawn from the patch's own stream,
    /// as used for every visit when `fixed_pairs` is set.
    pub fn fixed_pair(&self, index: usize, r: f64) -> Result<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x0f1e_d0a1_5000_0000);
        rng.set_stream(index as u64);
        let (name, patch) = &self.patches[index];
        Ok(make_training_pair(patch, r, self.cfg.n_max, name, &mut rng)?)
    }

    /// Runs one optimizer step and returns its trace row.
    pub fn step(&mut self) -> Result<TraceRow> {
        let step = self.step;
        let (mut rng, r) = self.step_rng(step);
        let batch = self.batch_indices(step);
        let item_seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
        let pairs = batch
            .iter()
            .zip(&item_seeds)
            .map(|(&i, &seed)| {
                let mut item_rng = ChaCha8Rng::seed_from_u64(seed);
                let pair = if self.cfg.fixed_pairs {
                    self.fixed_pair(i, r)?
                } else {
                    let (name, patch) = &self.patches[i];
                    make_training_pair(patch, r, self.cfg.n_max, name, &mut item_rng)?
                };
                Ok(augment(&pair, &self.cfg.augment, &mut item_rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let results = pairs
            .par_iter()
            .map(|p| pair_gradients(&p.input, &p.target, r, &self.params, &self.net, &self.cfg.loss))
            .collect::<Vec<_>>();
        let scale = 1.0 / pairs.len() as f64;
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut totals = LossBreakdown {
            converged: true,
            ..Default::default()
        };
        let mut non_finite_output = false;
        for result in results {
            let (parts, g) = match result {
                Err(TrainError::Net(NetError::Geom(GeomError::NonFinite { .. }))) => {
                    non_finite_output = true;
                    continue;
                }
                r => r?,
            };
            totals.total += scale * parts.total;
            totals.reconstruction += scale * parts.reconstruction;
            totals.uniform += scale * parts.uniform;
            totals.repulsion += scale * parts.repulsion;
            totals.converged &= parts.converged;
            for (name, gi) in g {
                let acc = grads.entry(name).or_insert_with(|| vec![0.0; gi.len()]);
                acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += scale * b);
            }
        }
        let finite = !non_finite_output && totals.total.is_finite() && grads.values().flatten().all(|g| g.is_finite());
        if !finite {
            let sources: Vec<String> = pairs.iter().map(|p| p.source_id.clone()).collect();
            let dump = self.cfg.dump_dir.as_ref().map(|d| self.dump_batch(d, step, &pairs));
            return Err(TrainError::NonFiniteLoss {
                step,
                r,
                sources,
                dump: dump.transpose()?,
            });
        }
        if let Some(max_norm) = self.cfg.grad_clip {
            clip_grad_norm(&mut grads, max_norm);
        }
        let lr = self.learning_rates(step);
        adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
        self.step += 1;
        Ok(TraceRow {
            step,
            r,
            loss: totals.total,
            rec: totals.reconstruction,
            uni: totals.uniform,
            rep: totals.repulsion,
            lr_fc: lr.fc,
            lr_other: lr.other,
            converged: totals.converged,
        })
    }

    fn dump_batch(&self, dir: &Path, step: u64, pairs: &[TrainingPair]) -> Result<PathBuf> {
        let out = dir.join(format!("nonfinite_step{step}"));
        std::fs::create_dir_all(&out).map_err(|e| TrainError::io(&out, e))?;
        for (i, p) in pairs.iter().enumerate() {
            write_xyz(out.join(format!("{i:02}_input.xyz")), &p.input)?;
            write_xyz(out.join(format!("{i:02}_target.xyz")), &p.target)?;
        }
        Ok(out)
    }

    /// Steps until `until` (or the configured total), calling `on_step`
    /// after each one.
    pub fn run_until(
        &mut self,
        until: u64,
        mut on_step: impl FnMut(&TraceRow, &Trainer) -> Result<()>,
    ) -> Result<Vec<TraceRow>> {
        let end = until.min(self.total_steps());
        let mut rows = Vec::new();
        while self.step < end {
            let row = self.step()?;
            on_step(&row, self)?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            train: self.cfg.clone(),
            step: self.step,
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }
}

/// Trains from scratch to completion and returns the final checkpoint with
/// the loss trace.
pub fn train_loop(patches: Vec<(String, PointCloud)>, net: NetConfig, cfg: TrainConfig) -> Result<(Checkpoint, Vec<TraceRow>)> {
    let mut trainer = Trainer::new(patches, net, cfg)?;
    let rows = trainer.run_until(u64::MAX, |_, _| Ok(()))?;
    Ok((trainer.checkpoint(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_patches, Builtin};
    use crate::net::ParamTensor;

    fn small_patches(count: usize, n: usize) -> Vec<(String, PointCloud)> {
        let mesh = Builtin::Torus.mesh(16);
        extract_patches(&mesh, count, n, 0.15, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("p{i}"), p.cloud))
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            n_max: 48,
            max_steps: Some(6),
            loss: LossConfig {
                sinkhorn: crate::loss::SinkhornConfig {
                    max_iters: 30,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        }
    }

    fn small_net() -> NetConfig {
        NetConfig {
            channels: 8,
            c_hidden: 8,
            n_blocks: 2,
            ..NetConfig::tiny()
        }
    }

    #[test]
    fn scale_set_sizes() {
        let s = scale_set(16.0, 0.1);
        assert_eq!(s.len(), 150);
        assert_eq!(s[0], 1.1);
        assert_eq!(*s.last().unwrap(), 16.0);
        assert_eq!(scale_set(4.0, 0.1).len(), 30);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
        assert!((0..=100).all(|s| cosine_lr(s, 100, 1e-4, 1e-5) >= 1e-5));
    }

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", ParamTensor { shape: vec![1], data: vec![value] });
        p
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = single(0.7);
        let mut state = AdamState::default();
        let grads = BTreeMap::from([("w".to_string(), vec![0.0])]);
        for _ in 0..3 {
            adam_step(&mut p, &grads, &mut state, LrMap { fc: 0.1, other: 0.1 }).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data[0], 0.7);
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let mut p = single(1.0);
        let mut state = AdamState::default();
        let gs = [0.5, -0.2, 0.3, 0.9, -1.1];
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            let grads = BTreeMap::from([("w".to_string(), vec![*g])]);
            adam_step(&mut p, &grads, &mut state, LrMap { fc: 0.5, other: 0.01 }).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((p.get("w").unwrap().data[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_moves_against_constant_gradient_and_names_missing() {
        let mut p = single(0.0);
        let mut state = AdamState::default();
        let grads = BTreeMap::from([("w".to_string(), vec![2.0])]);
        for _ in 0..10 {
            adam_step(&mut p, &grads, &mut state, LrMap { fc: 0.1, other: 0.1 }).unwrap();
        }
        assert!(p.get("w").unwrap().data[0] < 0.0);
        let err = adam_step(&mut p, &BTreeMap::new(), &mut state, LrMap { fc: 0.1, other: 0.1 }).unwrap_err();
        assert!(matches!(err, TrainError::MissingGradient(ref n) if n == "w"));
    }

    #[test]
    fn meta_params_use_fc_rate() {
        let lr = LrMap { fc: 1.0, other: 2.0 };
        assert_eq!(lr.for_param("block.02.meta.center.fc4.weight"), 1.0);
        assert_eq!(lr.for_param("block.01.center.weight"), 2.0);
        assert_eq!(lr.for_param("unpool.out.bias"), 2.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = BTreeMap::from([("a".to_string(), vec![3.0, 4.0]), ("b".to_string(), vec![12.0])]);
        assert_eq!(clip_grad_norm(&mut g, 5.0), 13.0);
        let norm: f64 = g.values().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 5.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_shares_scale() {
        let patches = small_patches(3, 120);
        let (a, ta) = train_loop(patches.clone(), small_net(), small_config()).unwrap();
        let (b, tb) = train_loop(patches, small_net(), small_config()).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert_eq!(ta.len(), 6);
        assert!(ta.iter().all(|row| row.loss.is_finite() && row.lr_other >= 1e-5));
    }

    #[test]
    fn resume_replays_the_run() {
        let patches = small_patches(3, 120);
        let (full, trace) = train_loop(patches.clone(), small_net(), small_config()).unwrap();
        let mut first = Trainer::new(patches.clone(), small_net(), small_config()).unwrap();
        first.run_until(3, |_, _| Ok(())).unwrap();
        let bytes = first.checkpoint().to_bytes();
        let mut resumed = Trainer::resume(patches, Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let rest = resumed.run_until(u64::MAX, |_, _| Ok(())).unwrap();
        assert_eq!(rest, trace[3..]);
        assert_eq!(resumed.checkpoint(), full);
    }

    #[test]
    fn checkpoint_errors() {
        let patches = small_patches(2, 120);
        let trainer = Trainer::new(patches, small_net(), small_config()).unwrap();
        let bytes = trainer.checkpoint().to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), trainer.checkpoint());
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("truncated"), "{err}");
        }
        let mut bumped = bytes.clone();
        bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bumped).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('1'), "{err}");
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn non_finite_loss_names_step_and_dumps_batch() {
        let dump = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            dump_dir: Some(dump.path().to_path_buf()),
            ..small_config()
        };
        let mut ckpt = Trainer::new(small_patches(2, 120), small_net(), cfg).unwrap().checkpoint();
        ckpt.params.get_mut("unpool.out.bias").unwrap().data[0] = f64::NAN;
        let mut trainer = Trainer::resume(small_patches(2, 120), ckpt).unwrap();
        match trainer.step() {
            Err(TrainError::NonFiniteLoss { step, sources, dump: Some(dir), .. }) => {
                assert_eq!(step, 0);
                assert_eq!(sources.len(), 2);
                assert!(dir.join("00_input.xyz").exists() && dir.join("01_target.xyz").exists());
            }
            other => panic!("expected a non-finite loss, got {:?}", other.map(|_| ())),
        }
        assert_eq!(trainer.step_index(), 0);
    }

    #[test]
    fn rejects_small_patches() {
        let patches = small_patches(1, 60);
        assert!(matches!(
            Trainer::new(patches, small_net(), small_config()),
            Err(TrainError::InvalidConfig(_))
        ));
    }
}
