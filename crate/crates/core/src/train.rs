//! Adam, the step learning-rate schedule, bottom cropping and the training loop.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use listereo_tensor::{Scalar, Shape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{SampleSource, StereoInputs};
use crate::error::{contract, Error, Result};
use crate::geometry::{subsample_depth, DepthMap};
use crate::losses::{depth_target, total_loss, LossReport, LossWeights, TrainMode};
use crate::net::{forward, prepare_input, Builder, Checkpoint, ModelConfig, ParamStore};
use crate::synth::SceneSample;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const LOG_FILE: &str = "train.log";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// Per-parameter first and second moments and the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Fails without modifying anything if a gradient is not finite.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let Some(p) = params.params.get(name) else {
            return contract(format!("gradient for unknown parameter {name}"));
        };
        if p.shape() != g.shape() {
            return contract(format!("gradient shape {} for parameter {name} of shape {}", g.shape(), p.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { what: format!("gradient of {name}"), step: state.t + 1 });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (ADAM_BETA1, ADAM_BETA2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = &params.params[name];
        let n = g.data().len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let mut data = p.to_vec();
        for i in 0..n {
            let gi = g.data()[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::lit(mi);
            v[i] = T::lit(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            data[i] = T::lit(data[i].as_f64() - update);
        }
        params.params.insert(name.clone(), Tensor::new(p.shape(), data)?);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    pub lr_drop_epoch: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Fraction of the sparse input's valid pixels kept at every step.
    pub level_of_sparsity: f64,
    /// Stops early after this many steps in total, if set.
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    /// Desk protocol: 12 epochs of batch 4 (600 steps on 200 scenes), with the
    /// learning rate halved after epoch 6. The rate is ten times the
    /// KITTI-scale one because the desk budget is far shorter.
    pub fn desk(mode: TrainMode) -> Self {
        Self {
            mode,
            epochs: 12,
            batch_size: 4,
            lr_initial: 1e-3,
            lr_after: 5e-4,
            lr_drop_epoch: 6,
            crop_height: 64,
            crop_width: 96,
            seed: 0,
            weights: LossWeights::for_mode(mode),
            level_of_sparsity: 1.0,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return contract("epochs and batch_size must be positive");
        }
        if self.lr_drop_epoch > self.epochs {
            return contract(format!("lr_drop_epoch {} exceeds epochs {}", self.lr_drop_epoch, self.epochs));
        }
        if !(self.lr_initial >= 0.0 && self.lr_after >= 0.0) {
            return contract("learning rates must be non-negative");
        }
        if !(self.level_of_sparsity > 0.0 && self.level_of_sparsity <= 1.0) {
            return contract(format!("level_of_sparsity {} outside (0, 1]", self.level_of_sparsity));
        }
        if self.crop_height == 0 || self.crop_width == 0 {
            return contract("crop size must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        (samples / self.batch_size).max(1) as u64
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        let full = self.steps_per_epoch(samples) * self.epochs as u64;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_drop_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_after
    }
}

/// Top-left corner of a crop anchored at the bottom edge with a uniformly
/// drawn horizontal offset.
pub fn crop_origin<R: Rng>(height: usize, width: usize, crop_h: usize, crop_w: usize, rng: &mut R) -> Result<(usize, usize)> {
    if crop_h > height || crop_w > width || crop_h == 0 || crop_w == 0 {
        return contract(format!("crop {crop_h}x{crop_w} does not fit image {height}x{width}"));
    }
    Ok((rng.gen_range(0..=width - crop_w), height - crop_h))
}

impl StereoInputs {
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self {
            left: self.left.crop(x0, y0, w, h),
            right: self.right.crop(x0, y0, w, h),
            sparse: self.sparse.crop(x0, y0, w, h),
            rig: self.rig.cropped(x0, y0, w, h),
        }
    }
}

/// Applies one bottom-anchored window to every image and map of the sample.
pub fn bottom_crop<R: Rng>(sample: &SceneSample, crop_h: usize, crop_w: usize, rng: &mut R) -> Result<SceneSample> {
    let (x0, y0) = crop_origin(sample.left.height, sample.left.width, crop_h, crop_w, rng)?;
    Ok(SceneSample {
        left: sample.left.crop(x0, y0, crop_w, crop_h),
        right: sample.right.crop(x0, y0, crop_w, crop_h),
        gt_depth: sample.gt_depth.crop(x0, y0, crop_w, crop_h),
        gt_disparity: sample.gt_disparity.crop(x0, y0, crop_w, crop_h),
        sparse_depth: sample.sparse_depth.crop(x0, y0, crop_w, crop_h),
        occlusion: sample.occlusion.crop(x0, y0, crop_w, crop_h),
        rig: sample.rig.cropped(x0, y0, crop_w, crop_h),
        seed: sample.seed,
    })
}

/// Seed for the `slot`-th random draw of `step`.
fn step_seed(seed: u64, step: u64, slot: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ slot.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z ^ (z >> 33)
}

/// Sample order of one epoch: a seeded permutation.
pub fn epoch_order(samples: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(step_seed(seed, epoch as u64, u64::MAX)));
    order
}

/// Inputs and depth target of one training step.
pub struct StepBatch {
    pub indices: Vec<usize>,
    pub inputs: Vec<StereoInputs>,
    pub ground_truth: Option<Vec<DepthMap>>,
}

/// Assembles the batch of `step` (zero-based). Ground truth is read only in
/// supervised mode.
pub fn step_batch(source: &dyn SampleSource, cfg: &TrainConfig, step: u64) -> Result<StepBatch> {
    let n = source.len();
    if n == 0 {
        return contract("empty dataset");
    }
    let per_epoch = cfg.steps_per_epoch(n);
    let epoch = (step / per_epoch) as usize;
    let pos = (step % per_epoch) as usize;
    let order = epoch_order(n, cfg.seed, epoch);
    let indices: Vec<usize> = (0..cfg.batch_size).map(|k| order[(pos * cfg.batch_size + k) % n]).collect();
    let mut inputs = Vec::new();
    let mut gts = Vec::new();
    for (k, &i) in indices.iter().enumerate() {
        let full = source.inputs(i)?;
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, step, 2 * k as u64));
        let (x0, y0) = crop_origin(full.left.height, full.left.width, cfg.crop_height, cfg.crop_width, &mut rng)?;
        let mut inp = full.crop(x0, y0, cfg.crop_width, cfg.crop_height);
        if cfg.level_of_sparsity < 1.0 {
            inp.sparse = subsample_depth(&inp.sparse, cfg.level_of_sparsity, step_seed(cfg.seed, step, 2 * k as u64 + 1))?;
        }
        if cfg.mode == TrainMode::Supervised {
            gts.push(source.ground_truth(i)?.crop(x0, y0, cfg.crop_width, cfg.crop_height));
        }
        inputs.push(inp);
    }
    let ground_truth = (cfg.mode == TrainMode::Supervised).then_some(gts);
    Ok(StepBatch { indices, inputs, ground_truth })
}

fn depth_tensor(maps: &[DepthMap]) -> Result<Tensor<f32>> {
    let parts: Result<Vec<Tensor<f32>>> = maps
        .iter()
        .map(|m| Ok(Tensor::new(Shape::new(1, 1, m.height, m.width), m.depth.iter().map(|&d| d as f32).collect())?))
        .collect();
    Ok(Tensor::stack(&parts?)?)
}

/// Forward pass and loss for one batch in training mode. Returns the loss
/// report and, when `grads` is set, the gradient of every parameter.
pub fn batch_loss(
    store: &mut ParamStore<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    batch: &StepBatch,
    grads: bool,
) -> Result<(LossReport, BTreeMap<String, Tensor<f32>>)> {
    let input = prepare_input::<f32>(&batch.inputs, model.depth_cap_m)?;
    let sparse = depth_tensor(&batch.inputs.iter().map(|i| i.sparse.clone()).collect::<Vec<_>>())?;
    let gt = batch.ground_truth.as_deref().map(depth_tensor).transpose()?;
    let target = depth_target(cfg.mode, &sparse, gt.as_ref())?;
    let mut b = Builder::new(store, true);
    let out = forward(&mut b, model, &input)?;
    let (terms, report) = total_loss(&mut b.g, out.left, out.right, out.disparity, out.depth, target, &cfg.weights)?;
    let mut result = BTreeMap::new();
    if grads && report.total.is_finite() {
        b.g.backward(terms.total)?;
        for (name, &v) in b.vars() {
            result.insert(name.clone(), b.g.grad(v).expect("parameter leaf"));
        }
    }
    Ok((report, result))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

impl LogLine {
    /// `step epoch lr total depth photo smooth`
    pub fn format(&self) -> String {
        let r = &self.report;
        format!("{} {} {} {} {} {} {}", self.step, self.epoch, self.lr, r.total, r.depth, r.photometric, r.smooth)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            epoch: f[1].parse().ok()?,
            lr: num(2)?,
            report: LossReport { total: num(3)?, depth: num(4)?, photometric: num(5)?, smooth: num(6)? },
        })
    }
}

/// Model and optimizer state between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(init_seed: u64) -> Self {
        Self { store: ParamStore::new(init_seed), adam: AdamState::default(), step: 0 }
    }

    pub fn to_checkpoint(&self, meta: &[(String, String)]) -> Checkpoint {
        let mut ck = Checkpoint::new(self.step);
        ck.meta.extend(meta.iter().cloned());
        ck.meta.push(("adam_t".into(), self.adam.t.to_string()));
        ck.put_store(&self.store);
        for (prefix, moments) in [("adam_m/", &self.adam.m), ("adam_v/", &self.adam.v)] {
            for (k, v) in moments {
                let shape = self.store.params[k].shape();
                ck.tensors.push((format!("{prefix}{k}"), Tensor::new(shape, v.clone()).expect("moment length")));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let store = ck.store()?;
        let mut adam = AdamState { t: ck.meta("adam_t").and_then(|t| t.parse().ok()).unwrap_or(0), ..Default::default() };
        for (k, t) in ck.with_prefix("adam_m/") {
            adam.m.insert(k.to_string(), t.to_vec());
        }
        for (k, t) in ck.with_prefix("adam_v/") {
            adam.v.insert(k.to_string(), t.to_vec());
        }
        Ok(Self { store, adam, step: ck.step })
    }
}

/// Where training writes its log and per-epoch checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Extra key/value pairs stored in every checkpoint header.
    pub meta: Vec<(String, String)>,
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch{epoch:03}.ckpt")
}

fn append_log(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Runs training from `state` up to the configured number of steps.
///
/// `on_step` sees the pre-update parameters and the loss of every step. A
/// non-finite loss or gradient stops training with an error; checkpoints
/// already written are left in place.
pub fn train_with_hook(
    source: &dyn SampleSource,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut state: TrainState,
    output: &TrainOutput,
    on_step: &mut dyn FnMut(u64, &ParamStore<f32>, &LossReport),
) -> Result<(TrainState, Vec<LogLine>)> {
    model.validate()?;
    cfg.validate()?;
    if let Some(dir) = &output.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n = source.len();
    let per_epoch = cfg.steps_per_epoch(n);
    let total = cfg.total_steps(n);
    let mut log = Vec::new();
    while state.step < total {
        let step = state.step;
        let epoch = (step / per_epoch) as usize;
        let lr = lr_schedule(epoch, cfg);
        let batch = step_batch(source, cfg, step)?;
        let (report, grads) = batch_loss(&mut state.store, model, cfg, &batch, true)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite { what: "loss".into(), step });
        }
        on_step(step, &state.store, &report);
        adam_step(&mut state.store, &grads, &mut state.adam, lr)?;
        state.step += 1;
        let line = LogLine { step, epoch, lr, report };
        if let Some(dir) = &output.dir {
            append_log(&dir.join(LOG_FILE), &line.format())?;
        }
        log.push(line);
        let finished_epoch = state.step % per_epoch == 0;
        if let Some(dir) = &output.dir {
            if finished_epoch || state.step == total {
                let ck = state.to_checkpoint(&output.meta);
                if finished_epoch {
                    ck.save(&dir.join(epoch_checkpoint_name(epoch)))?;
                }
                ck.save(&dir.join(LATEST_CHECKPOINT))?;
            }
        }
    }
    Ok((state, log))
}

pub fn train(
    source: &dyn SampleSource,
    model: &ModelConfig,
    cfg: &TrainConfig,
    state: TrainState,
    output: &TrainOutput,
) -> Result<(TrainState, Vec<LogLine>)> {
    train_with_hook(source, model, cfg, state, output, &mut |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        s.params.insert("w".into(), Tensor::scalar(v));
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn adam_first_step() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::default();
        adam_step(&mut p, &grad(1.0), &mut st, 1e-4).unwrap();
        let want = -1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p.params["w"].item() - want).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_two_steps_hand_oracle() {
        let (g, lr) = (0.3, 1e-3);
        let mut p = scalar_store(1.0);
        let mut st = AdamState::default();
        adam_step(&mut p, &grad(g), &mut st, lr).unwrap();
        adam_step(&mut p, &grad(g), &mut st, lr).unwrap();
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.params["w"].item() - theta).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_keep_parameters() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &grad(0.0), &mut st, 1e-2).unwrap();
        }
        assert_eq!(p.params["w"].item(), 0.7);
        adam_step(&mut p, &grad(3.0), &mut st, 0.0).unwrap();
        assert_eq!(p.params["w"].item(), 0.7);
    }

    #[test]
    fn adam_nan_names_parameter() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::default();
        let err = adam_step(&mut p, &grad(f64::NAN), &mut st, 1e-2).unwrap_err();
        assert!(err.to_string().contains("gradient of w"), "{err}");
        assert_eq!(p.params["w"].item(), 0.7);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::desk(TrainMode::SelfSupervised);
        assert_eq!(lr_schedule(0, &c), 1e-3);
        assert_eq!(lr_schedule(5, &c), 1e-3);
        assert_eq!(lr_schedule(6, &c), 5e-4);
        assert_eq!(lr_schedule(11, &c), 5e-4);
    }

    #[test]
    fn log_line_round_trip() {
        let l = LogLine { step: 3, epoch: 0, lr: 1e-4, report: LossReport { total: 1.25, depth: 0.5, photometric: 1.0, smooth: 25.0 } };
        assert_eq!(LogLine::parse(&l.format()), Some(l));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(20, 1, 0);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(20, 1, 0));
        assert_ne!(a, epoch_order(20, 1, 1));
    }
}
