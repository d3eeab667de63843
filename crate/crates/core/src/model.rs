//! The RL-CSC network.
//!
//! Six convolution layers, all without bias: `F0`, `F1` extract features,
//! `W1` and the shared `S` form the convolutional LISTA recursion, `W2` and
//! `H` reconstruct the residual. A per-channel threshold `θ` is subtracted
//! before every recursion's ReLU, which makes the activation the
//! nonnegative soft threshold `max(α − θ, 0)`.
//!
//! All routines are generic over [`Graph`], so the same code runs eagerly
//! for inference and on a [`Tape`] for training.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Eager, Graph, Scalar, Shape, Tape, Tensor, Var};

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Feature channels `n` (output of `F0`, `F1`, `W2`).
    pub features: usize,
    /// Sparse-code channels `m` (output of `W1`, `S`).
    pub codes: usize,
    /// Square kernel size `s`, odd.
    pub kernel: usize,
    /// Image channels `c` (1: luminance only).
    pub image_channels: usize,
    /// Number of shared-weight recursions `K`.
    pub recursions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 128,
            codes: 256,
            kernel: 3,
            image_channels: 1,
            recursions: 25,
        }
    }
}

impl ModelConfig {
    pub fn new(features: usize, codes: usize, recursions: usize) -> Self {
        ModelConfig {
            features,
            codes,
            recursions,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("features", self.features),
            ("codes", self.codes),
            ("kernel", self.kernel),
            ("image_channels", self.image_channels),
            ("recursions", self.recursions),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Network depth `K + 5`.
    pub fn depth(&self) -> usize {
        self.recursions + 5
    }

    /// Shapes of `F0, F1, W1, S, W2, H, θ`, in checkpoint order.
    pub fn shapes(&self) -> Layers<Shape> {
        let (n, m, s, c) = (self.features, self.codes, self.kernel, self.image_channels);
        Layers {
            f0: Shape::new(n, c, s, s),
            f1: Shape::new(n, n, s, s),
            w1: Shape::new(m, n, s, s),
            s: Shape::new(m, m, s, s),
            w2: Shape::new(n, m, s, s),
            h: Shape::new(c, n, s, s),
            theta: Shape::channel_vector(m),
        }
    }

    /// Trainable scalars, θ included. Independent of the recursion count.
    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|(_, s)| s.len()).sum()
    }
}

/// One value per trainable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers<V> {
    pub f0: V,
    pub f1: V,
    pub w1: V,
    pub s: V,
    pub w2: V,
    pub h: V,
    pub theta: V,
}

impl<V> Layers<V> {
    pub const NAMES: [&'static str; 7] = ["F0", "F1", "W1", "S", "W2", "H", "theta"];

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &V)> {
        Self::NAMES.into_iter().zip([
            &self.f0,
            &self.f1,
            &self.w1,
            &self.s,
            &self.w2,
            &self.h,
            &self.theta,
        ])
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut V)> {
        Self::NAMES.into_iter().zip([
            &mut self.f0,
            &mut self.f1,
            &mut self.w1,
            &mut self.s,
            &mut self.w2,
            &mut self.h,
            &mut self.theta,
        ])
    }

    pub fn map<U>(&self, mut f: impl FnMut(&'static str, &V) -> U) -> Layers<U> {
        Layers {
            f0: f("F0", &self.f0),
            f1: f("F1", &self.f1),
            w1: f("W1", &self.w1),
            s: f("S", &self.s),
            w2: f("W2", &self.w2),
            h: f("H", &self.h),
            theta: f("theta", &self.theta),
        }
    }

    pub fn try_map<U>(
        &self,
        mut f: impl FnMut(&'static str, &V) -> Result<U>,
    ) -> Result<Layers<U>> {
        Ok(Layers {
            f0: f("F0", &self.f0)?,
            f1: f("F1", &self.f1)?,
            w1: f("W1", &self.w1)?,
            s: f("S", &self.s)?,
            w2: f("W2", &self.w2)?,
            h: f("H", &self.h)?,
            theta: f("theta", &self.theta)?,
        })
    }

    pub fn from_vec(mut v: Vec<V>) -> Option<Self> {
        if v.len() != 7 {
            return None;
        }
        let theta = v.pop()?;
        let h = v.pop()?;
        let w2 = v.pop()?;
        let s = v.pop()?;
        let w1 = v.pop()?;
        let f1 = v.pop()?;
        let f0 = v.pop()?;
        Some(Layers {
            f0,
            f1,
            w1,
            s,
            w2,
            h,
            theta,
        })
    }
}

/// Trainable state of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct RlcscParams<T> {
    pub config: ModelConfig,
    pub layers: Layers<Tensor<T>>,
}

impl<T: Scalar> RlcscParams<T> {
    /// All weights and thresholds zero; the residual branch outputs zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(RlcscParams {
            config,
            layers: config.shapes().map(|_, &s| Tensor::zeros(s)),
        })
    }

    pub fn new(config: ModelConfig, layers: Layers<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = config.shapes();
        for ((name, t), (_, &shape)) in layers.iter().zip(expected.iter()) {
            if t.shape() != shape {
                return Err(Error::format(
                    "parameters",
                    format!("{name} has shape {}, expected {shape}", t.shape()),
                ));
            }
        }
        Ok(RlcscParams { config, layers })
    }

    pub fn depth(&self) -> usize {
        self.config.depth()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same weights with a different recursion count.
    pub fn with_recursions(&self, k: usize) -> Result<Self> {
        let mut out = self.clone();
        out.config.recursions = k;
        out.config.validate()?;
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> RlcscParams<U> {
        RlcscParams {
            config: self.config,
            layers: self.layers.map(|_, t| t.cast()),
        }
    }

    /// Records every layer as a trainable leaf.
    pub fn record(&self, tape: &mut Tape<T>) -> Layers<Var> {
        self.layers.map(|_, t| tape.param(t.clone()))
    }

    pub fn extract_features(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_input(&self.config, image.shape())?;
        extract_features(&mut Eager, &self.layers, image)
    }

    pub fn conv_lista(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        conv_lista(&mut Eager, &self.layers, y, self.config.recursions)
    }

    pub fn recover_residual(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        recover_residual(&mut Eager, &self.layers, z)
    }

    /// The residual `R` predicted for an interpolated input.
    pub fn residual(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_input(&self.config, image.shape())?;
        residual(&mut Eager, &self.layers, image, self.config.recursions)
    }

    /// `I_x = I_y + R`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_input(&self.config, image.shape())?;
        forward(
            &mut Eager,
            &self.layers,
            image,
            self.config.recursions,
            true,
        )
    }
}

fn check_input(config: &ModelConfig, shape: Shape) -> Result<()> {
    if shape.c != config.image_channels {
        return Err(Error::ChannelMismatch {
            op: "forward",
            expected: config.image_channels,
            found: shape.c,
        });
    }
    Ok(())
}

/// `y = relu(F1 ⊗ relu(F0 ⊗ I_y))`.
pub fn extract_features<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layers: &Layers<G::Value>,
    image: &G::Value,
) -> Result<G::Value> {
    let a = g.conv2d(image, &layers.f0)?;
    let a = g.relu(&a);
    let b = g.conv2d(&a, &layers.f1)?;
    Ok(g.relu(&b))
}

/// `K` conv-LISTA recursions from `z_0 = 0`:
/// `z_{k+1} = relu(W1 ⊗ y + S ⊗ z_k − θ)`.
///
/// `W1 ⊗ y` is evaluated once and reused by every recursion. With
/// `z_0 = 0` the first recursion reduces to `relu(W1 ⊗ y − θ)`.
pub fn conv_lista<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layers: &Layers<G::Value>,
    y: &G::Value,
    recursions: usize,
) -> Result<G::Value> {
    if recursions == 0 {
        return Err(Error::InvalidArgument(
            "recursion count must be >= 1".into(),
        ));
    }
    let drive = g.conv2d(y, &layers.w1)?;
    let pre = g.sub_channel(&drive, &layers.theta)?;
    let mut z = g.relu(&pre);
    for _ in 1..recursions {
        let lateral = g.conv2d(&z, &layers.s)?;
        let sum = g.add(&drive, &lateral)?;
        let pre = g.sub_channel(&sum, &layers.theta)?;
        z = g.relu(&pre);
    }
    Ok(z)
}

/// `R = H ⊗ relu(W2 ⊗ z)`.
pub fn recover_residual<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layers: &Layers<G::Value>,
    z: &G::Value,
) -> Result<G::Value> {
    let a = g.conv2d(z, &layers.w2)?;
    let a = g.relu(&a);
    g.conv2d(&a, &layers.h)
}

pub fn residual<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layers: &Layers<G::Value>,
    image: &G::Value,
    recursions: usize,
) -> Result<G::Value> {
    let y = extract_features(g, layers, image)?;
    let z = conv_lista(g, layers, &y, recursions)?;
    recover_residual(g, layers, &z)
}

/// Full network. With `skip` unset the identity branch is dropped and the
/// output is the reconstruction head alone.
pub fn forward<T: Scalar, G: Graph<T>>(
    g: &mut G,
    layers: &Layers<G::Value>,
    image: &G::Value,
    recursions: usize,
    skip: bool,
) -> Result<G::Value> {
    let r = residual(g, layers, image, recursions)?;
    if skip {
        g.add(image, &r)
    } else {
        Ok(r)
    }
}

/// Per-layer shape listing, depth and parameter count.
#[derive(Clone, Debug)]
pub struct Summary {
    pub config: ModelConfig,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "RL-CSC  K={}  n={}  m={}  s={}  c={}",
            c.recursions, c.features, c.codes, c.kernel, c.image_channels
        )?;
        writeln!(f, "depth: {}", c.depth())?;
        for (name, shape) in c.shapes().iter() {
            let [a, b, h, w] = shape.dims();
            let dims = if name == "theta" {
                format!("{b}")
            } else {
                format!("{a}x{b}x{h}x{w}")
            };
            writeln!(f, "  {name:<6} {dims:>16} {:>10}", shape.len())?;
        }
        write!(f, "parameters: {}", c.parameter_count())
    }
}
