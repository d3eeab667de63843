//! Central-difference check of the tape gradients on a small 64-bit model.
//!
//! A perturbation that flips any ReLU between active and inactive puts the
//! finite difference across a kink, where it does not estimate the
//! derivative. Such entries are detected by comparing activation patterns
//! and reported separately instead of being scored.

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{forward, Layers, ModelConfig, RlcscParams};
use crate::rng::{stream, Stream};
use crate::tensor::{Eager, Graph, Shape, Tensor};
use crate::trainer::{he_init, loss_and_gradients};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub config: ModelConfig,
    pub eps: f64,
    pub seed: u64,
    /// Spatial size of the random input.
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_per_tensor: Option<usize>,
}

impl GradcheckOptions {
    pub fn new(recursions: usize, features: usize, codes: usize) -> Self {
        GradcheckOptions {
            config: ModelConfig {
                features,
                codes,
                kernel: 3,
                image_channels: 1,
                recursions,
            },
            eps: 1e-5,
            seed: 0,
            height: 6,
            width: 6,
            batch: 1,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub checked: usize,
    /// Entries skipped because the perturbation crossed a ReLU kink.
    pub kinks: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over checked entries.
    pub norm_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.tensors.iter().all(|t| t.checked > 0) && self.max_rel_err() < tol
    }
}

/// Eager evaluation that also records which ReLU inputs were positive.
struct Probe {
    pattern: Vec<bool>,
}

impl Graph<f64> for Probe {
    type Value = Tensor<f64>;

    fn conv2d(&mut self, x: &Tensor<f64>, k: &Tensor<f64>) -> Result<Tensor<f64>> {
        Eager.conv2d(x, k)
    }

    fn relu(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.pattern.extend(x.data().iter().map(|&v| v > 0.0));
        Eager.relu(x)
    }

    fn add(&mut self, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
        Eager.add(a, b)
    }

    fn sub(&mut self, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
        Eager.sub(a, b)
    }

    fn sub_channel(&mut self, x: &Tensor<f64>, v: &Tensor<f64>) -> Result<Tensor<f64>> {
        Eager.sub_channel(x, v)
    }

    fn shape(&self, x: &Tensor<f64>) -> Shape {
        x.shape()
    }
}

fn probe_loss(
    layers: &Layers<Tensor<f64>>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    k: usize,
) -> Result<(f64, Vec<bool>)> {
    let mut p = Probe {
        pattern: Vec::new(),
    };
    let out = forward(&mut p, layers, x, k, true)?;
    Ok((out.mse(y)?, p.pattern))
}

/// Random model, input and target for a check.
pub fn problem(opts: &GradcheckOptions) -> Result<(RlcscParams<f64>, Tensor<f64>, Tensor<f64>)> {
    let mut params = he_init::<f64>(opts.config, opts.seed)?;
    let mut rng = stream(opts.seed, Stream::Synthetic);
    for v in params.layers.theta.data_mut() {
        *v = rng.random_range(0.0..0.05);
    }
    let shape = Shape::new(
        opts.batch,
        opts.config.image_channels,
        opts.height,
        opts.width,
    );
    let x = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0));
    Ok((params, x, y))
}

pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {}",
            opts.eps
        )));
    }
    let (params, x, y) = problem(opts)?;
    let k = opts.config.recursions;
    let (_, analytic) = loss_and_gradients(&params, &x, &y, true)?;
    let (_, base_pattern) = probe_loss(&params.layers, &x, &y, k)?;
    let mut pick_rng = stream(opts.seed ^ 0x9e37_79b9, Stream::Synthetic);

    let mut layers = params.layers.clone();
    let mut tensors = Vec::new();
    for (name, grad) in analytic.iter() {
        let len = grad.len();
        let entries: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < len => {
                let mut v = index::sample(&mut pick_rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            name,
            checked: 0,
            kinks: 0,
            max_rel_err: 0.0,
            norm_rel_err: 0.0,
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in entries {
            let orig = layer(&layers, name).data()[i];
            layer_mut(&mut layers, name).data_mut()[i] = orig + opts.eps;
            let (plus, pat_plus) = probe_loss(&layers, &x, &y, k)?;
            layer_mut(&mut layers, name).data_mut()[i] = orig - opts.eps;
            let (minus, pat_minus) = probe_loss(&layers, &x, &y, k)?;
            layer_mut(&mut layers, name).data_mut()[i] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                check.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[i];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale == 0.0 {
                0.0
            } else {
                (a - numeric).abs() / scale
            };
            check.max_rel_err = check.max_rel_err.max(rel);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            check.checked += 1;
        }
        let denom = a2.sqrt() + n2.sqrt();
        check.norm_rel_err = if denom == 0.0 {
            0.0
        } else {
            diff2.sqrt() / denom
        };
        tensors.push(check);
    }
    Ok(GradcheckReport { tensors })
}

fn layer<'a>(l: &'a Layers<Tensor<f64>>, name: &str) -> &'a Tensor<f64> {
    l.iter().find(|(n, _)| *n == name).expect("known layer").1
}

fn layer_mut<'a>(l: &'a mut Layers<Tensor<f64>>, name: &str) -> &'a mut Tensor<f64> {
    l.iter_mut()
        .find(|(n, _)| *n == name)
        .expect("known layer")
        .1
}
