//! Random-continuous-scale training.
//!
//! Each step draws one scale `s ~ U[scale_min, scale_max]` for the whole
//! batch, cuts one patch pair per sample, decodes exactly at the sampled
//! ground-truth coordinates and takes one Adam step on the mean L1 loss.
//!
//! All randomness is derived from `(seed, purpose, step, sample)` so the
//! only rng state that needs persisting is the seed and the step counter.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Graph, ParamGrads, ParamStore};
use crate::checkpoint::Checkpoint;
use crate::config::{parse, ModelConfig, Preset};
use crate::error::{Error, Result};
use crate::imaging::{crop_size, sample_patch_pair, ImageGray, PatchPair};
use crate::model::AnyTsr;
use crate::tensor::Tensor;

/// Mean absolute error.
pub fn l1_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidConfig("l1_loss of empty inputs".into()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub batch: usize,
    pub epochs: usize,
    pub repeats: usize,
    pub lr_init: f64,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub preset: Preset,
    /// Stop after this many steps; the schedule is compressed to fit.
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip; off by default.
    pub clip_grad_norm: Option<f64>,
    /// Steps between checkpoints (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_size: 48,
            scale_min: 1.0,
            scale_max: 4.0,
            batch: 16,
            epochs: 100,
            repeats: 20,
            lr_init: 4e-5,
            lr_max: 4e-4,
            warmup_epochs: 20,
            seed: 0,
            preset: Preset::Tiny,
            max_steps: None,
            clip_grad_norm: None,
            checkpoint_every: 0,
        }
    }
}

fn opt_to_string<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), |v| v.to_string())
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.trim() == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lr_size",
        "scale_min",
        "scale_max",
        "batch",
        "epochs",
        "repeats",
        "lr_init",
        "lr_max",
        "warmup_epochs",
        "seed",
        "preset",
        "max_steps",
        "clip_grad_norm",
        "checkpoint_every",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr_size" => self.lr_size = parse(key, value)?,
            "scale_min" => self.scale_min = parse(key, value)?,
            "scale_max" => self.scale_max = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "lr_init" => self.lr_init = parse(key, value)?,
            "lr_max" => self.lr_max = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "preset" => self.preset = value.trim().parse()?,
            "max_steps" => self.max_steps = parse_opt(key, value)?,
            "clip_grad_norm" => self.clip_grad_norm = parse_opt(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("lr_size", self.lr_size.to_string()),
            ("scale_min", self.scale_min.to_string()),
            ("scale_max", self.scale_max.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("repeats", self.repeats.to_string()),
            ("lr_init", self.lr_init.to_string()),
            ("lr_max", self.lr_max.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("preset", self.preset.to_string()),
            ("max_steps", opt_to_string(&self.max_steps)),
            ("clip_grad_norm", opt_to_string(&self.clip_grad_norm)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lr_size < 3 {
            return bad(format!("lr_size {} must be >= 3", self.lr_size));
        }
        if !(self.scale_min >= 1.0 && self.scale_max >= self.scale_min && self.scale_max.is_finite()) {
            return bad(format!(
                "scale range [{}, {}] must satisfy 1 <= min <= max",
                self.scale_min, self.scale_max
            ));
        }
        if self.batch == 0 || self.epochs == 0 || self.repeats == 0 {
            return bad("batch, epochs and repeats must be >= 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_max >= self.lr_init && self.lr_max.is_finite()) {
            return bad("learning rates must satisfy 0 < lr_init <= lr_max".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be >= 1".into());
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_grad_norm must be positive".into());
            }
        }
        Ok(())
    }

    /// `floor(images · repeats / batch)`, at least 1.
    pub fn steps_per_epoch(&self, images: usize) -> usize {
        (images * self.repeats / self.batch).max(1)
    }

    pub fn total_steps(&self, images: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(images);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn schedule(&self, images: usize) -> LrSchedule {
        let total = self.total_steps(images);
        let warmup = total * self.warmup_epochs / self.epochs;
        LrSchedule {
            lr_init: self.lr_init,
            lr_max: self.lr_max,
            warmup_steps: warmup,
            total_steps: total,
        }
    }
}

/// Linear warm-up from `lr_init` to `lr_max` over `warmup_steps`, then a
/// cosine back down to `lr_init` at the final step `total_steps − 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        self.lr_at(step as f64)
    }

    /// The schedule at a fractional step position.
    pub fn lr_at(&self, t: f64) -> f64 {
        let span = self.lr_max - self.lr_init;
        let warm = self.warmup_steps as f64;
        if t < warm {
            return self.lr_init + span * t / warm;
        }
        let last = self.total_steps.saturating_sub(1) as f64;
        if t >= last {
            return self.lr_init;
        }
        let p = (t - warm) / (last - warm);
        self.lr_init + span * 0.5 * (1.0 + (PI * p).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            let mut s = ParamStore::new();
            for (name, t) in params.iter() {
                s.insert(name, Tensor::zeros(t.shape()));
            }
            s
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. Parameters and moments are rounded to
    /// `f32` afterwards so a checkpoint captures the state exactly.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moment for every parameter");
            let v = self.v.get_mut(name).expect("moment for every parameter");
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
        params.quantize_f32();
        self.m.quantize_f32();
        self.v.quantize_f32();
    }
}

/// Derives an independent 64-bit seed for one consumer of randomness.
pub fn sub_seed(seed: u64, purpose: &str, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a running combination.
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut h = mix(seed);
    for byte in purpose.bytes() {
        h = mix(h ^ byte as u64);
    }
    mix(mix(h ^ a) ^ b)
}

fn rng_for(seed: u64, purpose: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, purpose, a, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub scale: f64,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepRecord {
    /// `step<TAB>epoch<TAB>scale<TAB>lr<TAB>loss`.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6e}\t{:.8}",
            self.step, self.epoch, self.scale, self.lr, self.loss
        )
    }
}

/// The result of differentiating the batch loss once.
pub struct BatchGrads {
    pub loss: f64,
    pub grads: ParamGrads,
}

/// Mean L1 loss over `batch` and its gradient w.r.t. every parameter.
/// Samples are processed in parallel; gradients are reduced in sample order.
pub fn batch_gradients(model: &AnyTsr, batch: &[PatchPair]) -> Result<BatchGrads> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let per_sample: Vec<Result<(f64, ParamGrads)>> = batch
        .par_iter()
        .map(|pair| {
            let mut g = Graph::new(&model.params);
            let pred = model.forward_points(&mut g, &pair.lr, pair.scale, &pair.gt_coords)?;
            let loss = g.l1_loss(pred, &pair.gt_values);
            let value = g.value(loss).data()[0];
            Ok((value, g.param_grads(loss)))
        })
        .collect();
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: ParamGrads = IndexMap::new();
    for r in per_sample {
        let (l, gr) = r?;
        loss += l * inv;
        for (name, g) in gr {
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b * inv;
                    }
                }
                None => {
                    let mut g = g;
                    g.scale_assign(inv);
                    grads.insert(name, g);
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss ({loss})")));
    }
    if let Some(bad) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", bad.0)));
    }
    Ok(BatchGrads { loss, grads })
}

pub fn grad_norm(grads: &ParamGrads) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn clip_grads(grads: &mut ParamGrads, norm: f64, max_norm: f64) {
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_assign(k);
        }
    }
}

pub struct Trainer {
    pub model: AnyTsr,
    pub cfg: TrainConfig,
    pub adam: Adam,
    /// Number of steps completed.
    pub step: usize,
    images: Vec<ImageGray>,
    schedule: LrSchedule,
    /// Patch-sampling pool; `None` samples on the calling thread.
    loader: Option<Arc<rayon::ThreadPool>>,
}

impl Trainer {
    pub fn new(model: AnyTsr, cfg: TrainConfig, images: Vec<ImageGray>) -> Result<Self> {
        cfg.validate()?;
        if images.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let crop = crop_size(cfg.scale_max, cfg.lr_size);
        if let Some(img) = images.iter().find(|i| i.height() < crop || i.width() < crop) {
            return Err(Error::Dataset(format!(
                "training image {}x{} smaller than the largest crop {crop}x{crop}",
                img.height(),
                img.width()
            )));
        }
        let schedule = cfg.schedule(images.len());
        let adam = Adam::new(&model.params);
        Ok(Self {
            model,
            cfg,
            adam,
            step: 0,
            images,
            schedule,
            loader: None,
        })
    }

    /// Samples patches on `n` worker threads. Every patch has its own
    /// seed, so batches do not depend on `n`.
    pub fn set_workers(&mut self, n: usize) -> Result<()> {
        self.loader = if n <= 1 {
            None
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            Some(Arc::new(pool))
        };
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch(self.images.len())
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn epoch_of(&self, step: usize) -> usize {
        step / self.steps_per_epoch()
    }

    /// Image visiting order for `epoch`: every image `repeats` times,
    /// shuffled.
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.images.len())
            .flat_map(|i| std::iter::repeat_n(i, self.cfg.repeats))
            .collect();
        order.shuffle(&mut rng_for(self.cfg.seed, "order", epoch as u64, 0));
        order
    }

    /// The batch for `step`: its scale and patch pairs.
    pub fn batch_for(&self, step: usize) -> Result<(f64, Vec<PatchPair>)> {
        let scale = rng_for(self.cfg.seed, "scale", step as u64, 0)
            .random_range(self.cfg.scale_min..=self.cfg.scale_max);
        let epoch = self.epoch_of(step);
        let order = self.epoch_order(epoch);
        let within = step % self.steps_per_epoch();
        let sample = |i: usize| {
            let img = order[(within * self.cfg.batch + i) % order.len()];
            let mut rng = rng_for(self.cfg.seed, "patch", step as u64, i as u64);
            sample_patch_pair(&self.images[img], scale, self.cfg.lr_size, &mut rng)
        };
        let batch = match &self.loader {
            Some(pool) => pool.install(|| (0..self.cfg.batch).into_par_iter().map(sample).collect::<Result<Vec<_>>>()),
            None => (0..self.cfg.batch).map(sample).collect::<Result<Vec<_>>>(),
        }?;
        Ok((scale, batch))
    }

    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let (scale, batch) = self.batch_for(step)?;
        let BatchGrads { loss, mut grads } = batch_gradients(&self.model, &batch)?;
        let norm = grad_norm(&grads);
        if let Some(c) = self.cfg.clip_grad_norm {
            clip_grads(&mut grads, norm, c);
        }
        let lr = self.schedule.lr(step);
        self.adam.step(&mut self.model.params, &grads, lr);
        if let Some((name, _)) = self.model.params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFinite(format!("parameter {name} after step {step}")));
        }
        self.step += 1;
        Ok(StepRecord {
            step,
            epoch: self.epoch_of(step),
            scale,
            lr,
            loss,
            grad_norm: norm,
        })
    }

    /// Runs to completion, writing one log line per step to `log` and
    /// calling `on_checkpoint` every `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        mut log: impl Write,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while !self.is_done() {
            let rec = self.train_step()?;
            writeln!(log, "{}", rec.log_line())?;
            records.push(rec);
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) && !self.is_done() {
                on_checkpoint(self)?;
            }
        }
        log.flush()?;
        on_checkpoint(self)?;
        Ok(records)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut config = BTreeMap::new();
        for (k, v) in self.model.config.to_pairs() {
            config.insert(format!("model.{k}"), v);
        }
        for (k, v) in self.cfg.to_pairs() {
            config.insert(format!("train.{k}"), v);
        }
        config.insert("state.step".into(), self.step.to_string());
        config.insert("state.epoch".into(), self.epoch_of(self.step).to_string());
        config.insert("state.seed".into(), self.cfg.seed.to_string());
        config.insert("state.adam_t".into(), self.adam.t.to_string());
        let mut tensors = IndexMap::new();
        for (name, t) in self.model.params.iter() {
            tensors.insert(name.to_string(), t.clone());
        }
        for (name, t) in self.adam.m.iter() {
            tensors.insert(format!("optimizer.m.{name}"), t.clone());
        }
        for (name, t) in self.adam.v.iter() {
            tensors.insert(format!("optimizer.v.{name}"), t.clone());
        }
        Checkpoint { config, tensors }
    }

    /// Restores model, optimizer and step counter. The training config is
    /// taken from the checkpoint; `images` must be the same training set.
    pub fn resume(ckpt: &Checkpoint, images: Vec<ImageGray>) -> Result<Self> {
        let model = model_from_checkpoint(ckpt)?;
        let cfg = train_config_from_checkpoint(ckpt)?;
        let mut t = Self::new(model, cfg, images)?;
        let state = |key: &str| -> Result<u64> {
            let v = ckpt
                .config
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            v.parse().map_err(|_| Error::Checkpoint(format!("bad {key} {v:?}")))
        };
        t.step = state("state.step")? as usize;
        t.adam.t = state("state.adam_t")?;
        for (prefix, store) in [("optimizer.m.", &mut t.adam.m), ("optimizer.v.", &mut t.adam.v)] {
            for (name, slot) in store.iter_mut() {
                let src = ckpt
                    .tensors
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {prefix}{name}")))?;
                if src.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("optimizer state {prefix}{name} has wrong shape")));
                }
                *slot = src.clone();
            }
        }
        Ok(t)
    }
}

fn prefixed(ckpt: &Checkpoint, prefix: &str) -> BTreeMap<String, String> {
    ckpt.config
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
        .collect()
}

/// Model configuration and parameters from a checkpoint; optimizer tensors
/// are ignored.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<AnyTsr> {
    let cfg = ModelConfig::from_pairs(&prefixed(ckpt, "model."))
        .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
    let mut params = ParamStore::new();
    for (name, t) in &ckpt.tensors {
        if !name.starts_with("optimizer.") {
            params.insert(name.clone(), t.clone());
        }
    }
    AnyTsr::from_parts(cfg, params)
}

pub fn train_config_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in prefixed(ckpt, "train.") {
        cfg.set(&k, &v)
            .map_err(|e| Error::Checkpoint(format!("training config: {e}")))?;
    }
    Ok(cfg)
}

/// A checkpoint holding only the model (no optimizer state).
pub fn model_checkpoint(model: &AnyTsr) -> Checkpoint {
    let mut config = BTreeMap::new();
    for (k, v) in model.config.to_pairs() {
        config.insert(format!("model.{k}"), v);
    }
    let tensors = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    Checkpoint { config, tensors }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_hand_values() {
        assert_eq!(l1_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(l1_loss(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert!(l1_loss(&[], &[]).is_err());
        assert!(l1_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn schedule_endpoints_and_continuity() {
        let s = LrSchedule {
            lr_init: 4e-5,
            lr_max: 4e-4,
            warmup_steps: 200,
            total_steps: 1000,
        };
        assert_eq!(s.lr(0), 4e-5);
        assert!((s.lr(200) - 4e-4).abs() < 1e-18);
        assert_eq!(s.lr(999), 4e-5);
        assert!((s.lr_at(200.0 - 1e-9) - s.lr(200)).abs() < 1e-12);
        assert!((s.lr_at(200.0 + 1e-9) - s.lr(200)).abs() < 1e-12);
        for step in 200..999 {
            assert!(s.lr(step + 1) <= s.lr(step));
        }
    }

    #[test]
    fn epoch_accounting() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.steps_per_epoch(8), 10);
        assert_eq!(cfg.total_steps(8), 1000);
        assert_eq!(cfg.schedule(8).warmup_steps, 200);
    }

    #[test]
    fn sub_seeds_differ_by_purpose() {
        assert_ne!(sub_seed(1, "scale", 0, 0), sub_seed(1, "patch", 0, 0));
        assert_ne!(sub_seed(1, "patch", 0, 1), sub_seed(1, "patch", 1, 0));
        assert_eq!(sub_seed(9, "x", 3, 4), sub_seed(9, "x", 3, 4));
    }

    #[test]
    fn config_pairs_round_trip() {
        let mut cfg = TrainConfig {
            max_steps: Some(600),
            clip_grad_norm: Some(0.5),
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        cfg.warmup_epochs = cfg.epochs;
        assert!(cfg.validate().is_err());
    }

    use crate::imaging::synth_dataset;

    fn small_trainer(seed: u64, steps: usize) -> Trainer {
        let images = synth_dataset(3, 40, &mut ChaCha8Rng::seed_from_u64(8));
        let mut mc = ModelConfig::preset(Preset::Tiny);
        mc.encoder.channels = 8;
        mc.upsampler.neo_width = 8;
        let model = AnyTsr::new(mc, 2).unwrap();
        let cfg = TrainConfig {
            lr_size: 10,
            batch: 2,
            seed,
            max_steps: Some(steps),
            lr_max: 1e-3,
            lr_init: 1e-4,
            warmup_epochs: 5,
            ..TrainConfig::default()
        };
        Trainer::new(model, cfg, images).unwrap()
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let t = small_trainer(1, 10);
        let (_, batch) = t.batch_for(0).unwrap();
        let grads = batch_gradients(&t.model, &batch).unwrap().grads;
        for name in t.model.params.names() {
            let g = grads.get(name).unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.max_abs() > 0.0, "{name} gradient is zero");
        }
    }

    #[test]
    fn fixed_seed_reproduces_losses() {
        let run = |seed| {
            let mut t = small_trainer(seed, 4);
            (0..4).map(|_| t.train_step().unwrap().loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut full = small_trainer(5, 6);
        let full_losses: Vec<u64> = (0..6).map(|_| full.train_step().unwrap().loss.to_bits()).collect();

        let mut first = small_trainer(5, 6);
        for _ in 0..3 {
            first.train_step().unwrap();
        }
        let bytes = first.checkpoint().to_bytes();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = Trainer::resume(&ckpt, first.images.clone()).unwrap();
        assert_eq!(resumed.step, 3);
        let rest: Vec<u64> = (0..3).map(|_| resumed.train_step().unwrap().loss.to_bits()).collect();
        assert_eq!(rest, full_losses[3..]);
        for (name, t) in full.model.params.iter() {
            assert_eq!(resumed.model.params.get(name).unwrap().data(), t.data(), "{name}");
        }
    }

    #[test]
    fn repeated_batch_loss_decreases() {
        let mut t = small_trainer(6, 60);
        let (_, batch) = t.batch_for(0).unwrap();
        let mut losses = Vec::new();
        for step in 0..50 {
            let bg = batch_gradients(&t.model, &batch).unwrap();
            losses.push(bg.loss);
            t.adam.step(&mut t.model.params, &bg.grads, t.schedule.lr(step));
        }
        assert!(losses[49] < 0.8 * losses[0], "{:?}", (losses[0], losses[49]));
    }

    #[test]
    fn training_loss_trends_down() {
        let mut t = small_trainer(7, 60);
        let mut log = Vec::new();
        let records = t.run(&mut log, |_| Ok(())).unwrap();
        let median = |r: &[StepRecord]| {
            let mut v: Vec<f64> = r.iter().map(|r| r.loss).collect();
            v.sort_by(f64::total_cmp);
            (v[4] + v[5]) / 2.0
        };
        assert_eq!(records.len(), 60);
        assert!(median(&records[50..]) < median(&records[..10]));
        assert_eq!(String::from_utf8(log).unwrap().lines().count(), 60);
    }

    #[test]
    fn checkpoint_forward_is_bitwise_identical() {
        let t = small_trainer(1, 1);
        let lr = crate::imaging::ImageGray::from_fn(9, 11, |i, j| ((i + j) % 5) as f64 / 4.0).unwrap();
        let before = t.model.infer(&lr, 2.7).unwrap();
        let ckpt = Checkpoint::from_bytes(&model_checkpoint(&t.model).to_bytes()).unwrap();
        let after = model_from_checkpoint(&ckpt).unwrap().infer(&lr, 2.7).unwrap();
        assert!(before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
