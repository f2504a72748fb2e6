//! Minimal deterministic layer engine.
//!
//! Dense NCHW tensors on `ndarray`, explicit forward/backward per layer with
//! caches passed by value (so one network can run several forward passes
//! before its backwards, as the joint translation objective requires).
//! Everything is generic over `f32`/`f64`; training runs at `f32`, gradient
//! verification instantiates the same code at `f64`.
//!
//! Determinism contract: given equal inputs and parameters, forward and
//! backward are bit-identical across runs and thread counts. Per-sample work
//! may run in parallel (disjoint outputs); all cross-sample reductions happen
//! serially in sample order.

mod act;
mod block;
mod conv;
mod layer;
mod linear;
mod norm;

pub use act::{LeakyRelu, Relu, Tanh};
pub use block::{BasicBlock, ResBlock};
pub use conv::{Conv2d, ConvTranspose2d};
pub use layer::{Layer, LayerCache, Seq, SeqCache};
pub use linear::{Linear, LinearCache};
pub use norm::{BatchNorm2d, InstanceNorm2d};

use ndarray::{Array4, ArrayD};
use num_traits::FromPrimitive;

/// Scalar type the engine is generic over.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
    fn to_f64c(self) -> f64;
}

impl Real for f32 {
    fn to_f64c(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64c(self) -> f64 {
        self
    }
}

/// Shorthand for a conversion that appears in every backward pass.
#[inline]
pub fn rf<F: Real>(x: f64) -> F {
    F::from_f64c(x)
}

/// Batched images, channel-first: (B, C, H, W).
pub type Images<F> = Array4<F>;

/// Train/eval switch. Only batch normalization behaves differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Real> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(name: impl Into<String>, value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Visitor over trainable parameters, in a construction order that is stable
/// across runs (optimizer state and checkpoints key off this order).
pub trait Parameters<F: Real> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>));

    /// Non-trainable state that still belongs in checkpoints and digests
    /// (batch-norm running statistics). Default: none.
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {}

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.numel());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}
