use super::{conv2d_backward, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param,
    Conv2d { x: Var, k: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    SubChannel { x: Var, v: Var },
    Scale { x: Var, s: T },
    Mse { a: Var, b: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every input precedes the
/// node that consumes it. A value consumed several times (a shared weight,
/// or a hoisted activation reused across recursions) receives the sum of
/// all its gradient contributions.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let value = self.value(x).conv2d(self.value(k), None)?;
        let rg = self.requires(x) || self.requires(k);
        Ok(self.push(value, Op::Conv2d { x, k }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let rg = self.requires(x);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    /// `x - v` with `v` a `(1, c, 1, 1)` vector broadcast over `x`.
    pub fn sub_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let value = self.value(x).sub_channel(self.value(v))?;
        let rg = self.requires(x) || self.requires(v);
        Ok(self.push(value, Op::SubChannel { x, v }, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.requires(x);
        self.push(value, Op::Scale { x, s }, rg)
    }

    /// Mean squared difference as a `1x1x1x1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.value(a).mse(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::scalar(T::from_f64(m)), Op::Mse { a, b }, rg))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != Shape::scalar() {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires(loss) {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match node.op {
                // Leaf gradients are kept; intermediates are released as we go.
                Op::Param => grads[id] = Some(g),
                Op::Constant => {}
                Op::Conv2d { x, k } => {
                    let need_dx = self.requires(x);
                    let (dx, dk) = conv2d_backward(self.value(x), self.value(k), &g, need_dx)?;
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, dx)?;
                    }
                    if self.requires(k) {
                        accumulate(&mut grads, k, dk)?;
                    }
                }
                Op::Relu { x } => {
                    // Derivative taken as 0 at the kink.
                    let out = &node.value;
                    let d = Tensor::new(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(out.data())
                            .map(|(&gi, &yi)| if yi > T::zero() { gi } else { T::zero() })
                            .collect(),
                    )?;
                    accumulate(&mut grads, x, d)?;
                }
                Op::Add { a, b } => {
                    if self.requires(b) {
                        accumulate(&mut grads, b, g.clone())?;
                    }
                    if self.requires(a) {
                        accumulate(&mut grads, a, g)?;
                    }
                }
                Op::Sub { a, b } => {
                    if self.requires(b) {
                        accumulate(&mut grads, b, g.scale(-T::one()))?;
                    }
                    if self.requires(a) {
                        accumulate(&mut grads, a, g)?;
                    }
                }
                Op::SubChannel { x, v } => {
                    if self.requires(v) {
                        accumulate(&mut grads, v, g.channel_sums().scale(-T::one()))?;
                    }
                    if self.requires(x) {
                        accumulate(&mut grads, x, g)?;
                    }
                }
                Op::Scale { x, s } => {
                    accumulate(&mut grads, x, g.scale(s))?;
                }
                Op::Mse { a, b } => {
                    let (va, vb) = (self.value(a), self.value(b));
                    let factor = g.data()[0] * T::from_f64(2.0 / va.len() as f64);
                    let da = Tensor::new(
                        va.shape(),
                        va.data()
                            .iter()
                            .zip(vb.data())
                            .map(|(&p, &q)| (p - q) * factor)
                            .collect(),
                    )?;
                    if self.requires(b) {
                        accumulate(&mut grads, b, da.scale(-T::one()))?;
                    }
                    if self.requires(a) {
                        accumulate(&mut grads, a, da)?;
                    }
                }
            }
        }

        let requires = self.nodes.iter().map(|n| n.requires_grad).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads, requires })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    let slot = &mut grads[v.0];
    *slot = Some(match slot.take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    requires: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter leaf.
    ///
    /// Fails for constants and for intermediate values, whose gradients are
    /// not retained.
    pub fn get(&self, v: Var) -> Result<&Tensor<T>> {
        if !self.requires.get(v.0).copied().unwrap_or(false) {
            return Err(Error::Detached(v.0));
        }
        self.grads[v.0].as_ref().ok_or(Error::Detached(v.0))
    }

    pub fn take(&mut self, v: Var) -> Result<Tensor<T>> {
        self.get(v)?;
        Ok(self.grads[v.0].take().expect("checked above"))
    }
}

/// The operation set needed to express the network, evaluated either
/// eagerly on tensors ([`Eager`]) or recorded for differentiation
/// ([`Tape`]). Both paths run the same tensor kernels, so their forward
/// values agree bit for bit.
pub trait Graph<T: Scalar> {
    type Value;

    fn conv2d(&mut self, x: &Self::Value, k: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub_channel(&mut self, x: &Self::Value, v: &Self::Value) -> Result<Self::Value>;
    fn shape(&self, x: &Self::Value) -> Shape;
}

/// Direct evaluation without recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn conv2d(&mut self, x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(k, None)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.relu()
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.sub(b)
    }

    fn sub_channel(&mut self, x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        x.sub_channel(v)
    }

    fn shape(&self, x: &Tensor<T>) -> Shape {
        x.shape()
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Value = Var;

    fn conv2d(&mut self, x: &Var, k: &Var) -> Result<Var> {
        Tape::conv2d(self, *x, *k)
    }

    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::sub(self, *a, *b)
    }

    fn sub_channel(&mut self, x: &Var, v: &Var) -> Result<Var> {
        Tape::sub_channel(self, *x, *v)
    }

    fn shape(&self, x: &Var) -> Shape {
        self.value(*x).shape()
    }
}
