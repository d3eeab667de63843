//! SGD training of the network on a [`PatchSet`].
//!
//! Each step: `g ← clamp(g, −c, c)`, `g ← g + λ·w` (not for θ),
//! `v ← μ·v + g`, `w ← w − lr·v`, then θ is projected onto `θ ≥ 0`.
//! The learning rate follows `lr0 / factor^⌊epoch / every⌋`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::model::{forward, Layers, ModelConfig, RlcscParams};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tape, Tensor};

/// Optimisation hyper-parameters. Defaults are the full-scale settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    /// Per-element gradient bound.
    pub clip_theta: f64,
    pub seed: u64,
    /// Add the input back onto the network output (global skip).
    pub residual_enabled: bool,
    pub checkpoint_every: usize,
    /// Scale the clip bound by `1/lr` instead of using it as is.
    pub adjustable_clip: bool,
    /// Stop after this many optimiser steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr0: 0.1,
            lr_decay_factor: 10.0,
            lr_decay_every: 10,
            epochs: 35,
            clip_theta: 0.4,
            seed: 0,
            residual_enabled: true,
            checkpoint_every: 1,
            adjustable_clip: false,
            max_steps: None,
        }
    }
}

fn parse_value<V: FromStr>(line: usize, key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        message: format!("invalid value {value:?} for {key}: {e}"),
    })
}

impl TrainConfig {
    pub const KEYS: [&'static str; 13] = [
        "batch_size",
        "momentum",
        "weight_decay",
        "lr0",
        "lr_decay_factor",
        "lr_decay_every",
        "epochs",
        "clip_theta",
        "seed",
        "residual_enabled",
        "checkpoint_every",
        "adjustable_clip",
        "max_steps",
    ];

    /// Parses flat `key = value` lines over the defaults. Blank lines and
    /// `#` comments are skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {key}"),
                });
            }
            seen.push(key.to_string());
            match key {
                "batch_size" => cfg.batch_size = parse_value(line, key, value)?,
                "momentum" => cfg.momentum = parse_value(line, key, value)?,
                "weight_decay" => cfg.weight_decay = parse_value(line, key, value)?,
                "lr0" => cfg.lr0 = parse_value(line, key, value)?,
                "lr_decay_factor" => cfg.lr_decay_factor = parse_value(line, key, value)?,
                "lr_decay_every" => cfg.lr_decay_every = parse_value(line, key, value)?,
                "epochs" => cfg.epochs = parse_value(line, key, value)?,
                "clip_theta" => cfg.clip_theta = parse_value(line, key, value)?,
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "residual_enabled" => cfg.residual_enabled = parse_value(line, key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_value(line, key, value)?,
                "adjustable_clip" => cfg.adjustable_clip = parse_value(line, key, value)?,
                "max_steps" => {
                    cfg.max_steps = if value == "none" {
                        None
                    } else {
                        Some(parse_value(line, key, value)?)
                    }
                }
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Rejects settings the optimiser cannot run with. A zero learning
    /// rate is allowed.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::Config {
                line: 0,
                message: m,
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be >= 0, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0) || !self.lr_decay_factor.is_finite() {
            return bad(format!(
                "lr_decay_factor must be positive, got {}",
                self.lr_decay_factor
            ));
        }
        if self.lr_decay_every == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return bad("lr_decay_every, epochs and checkpoint_every must be positive".into());
        }
        if !(self.clip_theta > 0.0) {
            return bad(format!(
                "clip_theta must be positive, got {}",
                self.clip_theta
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let max_steps = self.max_steps.map_or("none".to_string(), |s| s.to_string());
        format!(
            "batch_size = {}\nmomentum = {}\nweight_decay = {}\nlr0 = {}\nlr_decay_factor = {}\n\
             lr_decay_every = {}\nepochs = {}\nclip_theta = {}\nseed = {}\nresidual_enabled = {}\n\
             checkpoint_every = {}\nadjustable_clip = {}\nmax_steps = {}\n",
            self.batch_size,
            self.momentum,
            self.weight_decay,
            self.lr0,
            self.lr_decay_factor,
            self.lr_decay_every,
            self.epochs,
            self.clip_theta,
            self.seed,
            self.residual_enabled,
            self.checkpoint_every,
            self.adjustable_clip,
            max_steps,
        )
    }
}

/// Learning rate for the 0-based `epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0
        / cfg
            .lr_decay_factor
            .powi((epoch / cfg.lr_decay_every) as i32)
}

/// Conv weights drawn from `N(0, 2 / (out · k²))`, θ zero.
pub fn he_init<T: Scalar>(config: ModelConfig, seed: u64) -> Result<RlcscParams<T>> {
    let mut params = RlcscParams::zeros(config)?;
    let mut rng = stream(seed, Stream::Init);
    for (name, t) in params.layers.iter_mut() {
        if name == "theta" {
            continue;
        }
        let s = t.shape();
        let std = (2.0 / (s.n * s.h * s.w) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in t.data_mut() {
            *v = T::from_f64(normal.sample(&mut rng));
        }
    }
    Ok(params)
}

/// Mean over batch and pixels of the squared reconstruction error.
pub fn loss<T: Scalar>(
    params: &RlcscParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    residual_enabled: bool,
) -> Result<f64> {
    if input.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut g = crate::tensor::Eager;
    let out = forward(
        &mut g,
        &params.layers,
        input,
        params.config.recursions,
        residual_enabled,
    )?;
    out.mse(target)
}

/// Loss and the gradient with respect to every layer.
pub fn loss_and_gradients<T: Scalar>(
    params: &RlcscParams<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    residual_enabled: bool,
) -> Result<(f64, Layers<Tensor<T>>)> {
    if input.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape);
    let x = tape.constant(input.clone());
    let y = tape.constant(target.clone());
    let out = forward(
        &mut tape,
        &vars,
        &x,
        params.config.recursions,
        residual_enabled,
    )?;
    let loss_var = tape.mse(out, y)?;
    let value = tape.value(out).mse(target)?;
    let mut grads = tape.backward(loss_var)?;
    let g = vars.try_map(|_, &v| grads.take(v))?;
    Ok((value, g))
}

/// Momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Layers<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(config: ModelConfig) -> Self {
        SgdState {
            velocity: config.shapes().map(|_, &s| Tensor::zeros(s)),
        }
    }
}

/// One SGD update in place. `step` only labels errors.
pub fn sgd_step<T: Scalar>(
    params: &mut RlcscParams<T>,
    grads: &Layers<Tensor<T>>,
    state: &mut SgdState<T>,
    lr: f64,
    cfg: &TrainConfig,
    step: u64,
) -> Result<()> {
    let bound = if cfg.adjustable_clip && lr > 0.0 {
        cfg.clip_theta / lr
    } else {
        cfg.clip_theta
    };
    let (bound, lr_t) = (T::from_f64(bound), T::from_f64(lr));
    let (mu, wd) = (T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    let layers = params
        .layers
        .iter_mut()
        .zip(grads.iter())
        .zip(state.velocity.iter_mut());
    for (((name, w), (_, g)), (_, v)) in layers {
        if g.shape() != w.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: w.shape(),
                rhs: g.shape(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {name}"),
                step: step as usize,
            });
        }
        let is_theta = name == "theta";
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let mut gi = gi.max(-bound).min(bound);
            if !is_theta {
                gi = gi + wd * *wi;
            }
            *vi = mu * *vi + gi;
            *wi = *wi - lr_t * *vi;
            if is_theta && *wi < T::zero() {
                *wi = T::zero();
            }
        }
    }
    Ok(())
}

/// Trained state: parameters, momentum and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: RlcscParams<f32>,
    pub velocity: Layers<Tensor<f32>>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser steps.
    pub step: u64,
}

const CKPT_MAGIC: &[u8; 6] = b"RLCSC1";
const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    /// He-initialised parameters and zero momentum.
    pub fn fresh(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Checkpoint {
            params: he_init(config, seed)?,
            velocity: SgdState::<f32>::new(config).velocity,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_params(params: RlcscParams<f32>) -> Self {
        Checkpoint {
            velocity: SgdState::<f32>::new(params.config).velocity,
            params,
            epoch: 0,
            step: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        for v in [
            c.features,
            c.codes,
            c.kernel,
            c.image_channels,
            c.recursions,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for layers in [&self.params.layers, &self.velocity] {
            for (_, t) in layers.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format("checkpoint", m);
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| bad(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        if take(6)? != CKPT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CKPT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let config = ModelConfig {
            features: dims[0],
            codes: dims[1],
            kernel: dims[2],
            image_channels: dims[3],
            recursions: dims[4],
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        let epoch = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let mut read_layers = || -> Result<Layers<Tensor<f32>>> {
            config.shapes().try_map(|_, &shape| {
                let raw = take(shape.len() * 4)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Tensor::new(shape, data)
            })
        };
        let layers = read_layers()?;
        let velocity = read_layers()?;
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            params: RlcscParams::new(config, layers)?,
            velocity,
            epoch,
            step,
        })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(tmp, e))?;
        f.sync_all().map_err(|e| Error::io(tmp, e))?;
        drop(f);
        fs::rename(tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Optimiser steps completed so far.
    pub step: u64,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,loss,lr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:e},{:e}", self.epoch, self.step, self.loss, self.lr)
    }
}

/// Receives progress during [`train`].
pub trait TrainSink {
    fn on_step(&mut self, _step: u64, _loss: f64) {}

    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` epochs and after the last one.
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainSink for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
    /// Minibatch loss of every step taken in this call.
    pub step_losses: Vec<f64>,
}

/// Batch order for the 0-based `epoch`; independent of earlier epochs, so
/// resumed runs shuffle identically.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Shuffle);
    // 2^40 words per epoch, far beyond what one shuffle consumes.
    rng.set_word_pos((epoch as u128) << 40);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs from `start.epoch` to `cfg.epochs` (or `cfg.max_steps`).
pub fn train(
    set: &PatchSet,
    start: Checkpoint,
    cfg: &TrainConfig,
    sink: &mut dyn TrainSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("patch set"));
    }
    let Checkpoint {
        mut params,
        velocity,
        mut epoch,
        mut step,
    } = start;
    let mut state = SgdState { velocity };
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let limit = cfg.max_steps.unwrap_or(u64::MAX);

    while epoch < cfg.epochs && step < limit {
        let lr = lr_schedule(epoch, cfg);
        let order = epoch_order(set.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if step >= limit {
                break;
            }
            let (x, y) = set.batch(chunk)?;
            let (l, grads) = loss_and_gradients(&params, &x, &y, cfg.residual_enabled)?;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    loss: l,
                });
            }
            sgd_step(&mut params, &grads, &mut state, lr, cfg, step)?;
            step += 1;
            sum += l;
            batches += 1;
            step_losses.push(l);
            sink.on_step(step, l);
        }
        epoch += 1;
        let record = EpochRecord {
            epoch,
            step,
            loss: sum / batches as f64,
            lr,
        };
        log::info!("epoch {epoch}  lr {lr:e}  loss {:.6e}", record.loss);
        sink.on_epoch(&record)?;
        epochs.push(record);
        let last = epoch >= cfg.epochs || step >= limit;
        if epoch % cfg.checkpoint_every == 0 || last {
            sink.on_checkpoint(&Checkpoint {
                params: params.clone(),
                velocity: state.velocity.clone(),
                epoch,
                step,
            })?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            velocity: state.velocity,
            epoch,
            step,
        },
        epochs,
        step_losses,
    })
}

/// Mean loss over the whole set, in fixed batches.
pub fn dataset_loss(
    params: &RlcscParams<f32>,
    set: &PatchSet,
    residual_enabled: bool,
    batch_size: usize,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("patch set"));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = set.batch(chunk)?;
        total += loss(params, &x, &y, residual_enabled)? * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}
