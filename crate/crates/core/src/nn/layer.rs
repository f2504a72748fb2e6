//! Layer enum and sequential container. Caches are explicit values returned
//! by forward and consumed by backward, so one network can hold several
//! in-flight passes (the joint objective runs each generator three times per
//! step before any backward).

use super::act::{LeakyRelu, LeakyReluCache, Relu, ReluCache, Tanh, TanhCache};
use super::block::{BasicBlock, BasicBlockCache, ResBlock, ResBlockCache};
use super::conv::{Conv2d, ConvCache, ConvTCache, ConvTranspose2d};
use super::norm::{BatchNorm2d, BatchNormCache, InstanceNorm2d, InstNormCache};
use super::{Images, Mode, Param, Real};

pub enum Layer<F: Real> {
    Conv(Conv2d<F>),
    ConvT(ConvTranspose2d<F>),
    InstNorm(InstanceNorm2d<F>),
    BatchNorm(BatchNorm2d<F>),
    Relu(Relu),
    LeakyRelu(LeakyRelu),
    Tanh(Tanh),
    Res(ResBlock<F>),
    Basic(BasicBlock<F>),
}

pub enum LayerCache<F: Real> {
    Conv(ConvCache<F>),
    ConvT(ConvTCache<F>),
    InstNorm(InstNormCache<F>),
    BatchNorm(BatchNormCache<F>),
    Relu(ReluCache<F>),
    LeakyRelu(LeakyReluCache<F>),
    Tanh(TanhCache<F>),
    Res(ResBlockCache<F>),
    Basic(BasicBlockCache<F>),
}

impl<F: Real> Layer<F> {
    pub fn forward(&mut self, x: Images<F>, mode: Mode) -> (Images<F>, LayerCache<F>) {
        match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Conv(c))
            }
            Layer::ConvT(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::ConvT(c))
            }
            Layer::InstNorm(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::InstNorm(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward(x, mode);
                (y, LayerCache::BatchNorm(c))
            }
            Layer::Relu(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Relu(c))
            }
            Layer::LeakyRelu(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::LeakyRelu(c))
            }
            Layer::Tanh(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Tanh(c))
            }
            Layer::Res(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Res(c))
            }
            Layer::Basic(l) => {
                let (y, c) = l.forward(x, mode);
                (y, LayerCache::Basic(c))
            }
        }
    }

    pub fn backward(&mut self, cache: LayerCache<F>, dy: &Images<F>, wrt_params: bool) -> Images<F> {
        match (self, cache) {
            (Layer::Conv(l), LayerCache::Conv(c)) => l.backward(c, dy, wrt_params),
            (Layer::ConvT(l), LayerCache::ConvT(c)) => l.backward(c, dy, wrt_params),
            (Layer::InstNorm(l), LayerCache::InstNorm(c)) => l.backward(c, dy, wrt_params),
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => l.backward(c, dy, wrt_params),
            (Layer::Relu(l), LayerCache::Relu(c)) => l.backward(c, dy),
            (Layer::LeakyRelu(l), LayerCache::LeakyRelu(c)) => l.backward(c, dy),
            (Layer::Tanh(l), LayerCache::Tanh(c)) => l.backward(c, dy),
            (Layer::Res(l), LayerCache::Res(c)) => l.backward(c, dy, wrt_params),
            (Layer::Basic(l), LayerCache::Basic(c)) => l.backward(c, dy, wrt_params),
            _ => unreachable!("layer/cache kind mismatch"),
        }
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        match self {
            Layer::Conv(l) => l.visit_params(f),
            Layer::ConvT(l) => l.visit_params(f),
            Layer::InstNorm(l) => l.visit_params(f),
            Layer::BatchNorm(l) => l.visit_params(f),
            Layer::Res(l) => l.visit_params(f),
            Layer::Basic(l) => l.visit_params(f),
            Layer::Relu(_) | Layer::LeakyRelu(_) | Layer::Tanh(_) => {}
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<F>)) {
        match self {
            Layer::BatchNorm(l) => l.visit_buffers(f),
            Layer::Basic(l) => l.visit_buffers(f),
            _ => {}
        }
    }
}

pub type SeqCache<F> = Vec<LayerCache<F>>;

/// A straight pipeline of layers.
pub struct Seq<F: Real> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Real> Seq<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Seq { layers }
    }

    pub fn forward(&mut self, mut x: Images<F>, mode: Mode) -> (Images<F>, SeqCache<F>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut() {
            let (y, c) = layer.forward(x, mode);
            x = y;
            caches.push(c);
        }
        (x, caches)
    }

    pub fn backward(&mut self, caches: SeqCache<F>, dy: &Images<F>, wrt_params: bool) -> Images<F> {
        let mut grad: Option<Images<F>> = None;
        for (layer, cache) in self.layers.iter_mut().zip(caches.into_iter()).rev() {
            let g = match grad {
                Some(ref g) => layer.backward(cache, g, wrt_params),
                None => layer.backward(cache, dy, wrt_params),
            };
            grad = Some(g);
        }
        grad.expect("non-empty sequence")
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        for layer in self.layers.iter_mut() {
            layer.visit_params(f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<F>)) {
        for layer in self.layers.iter_mut() {
            layer.visit_buffers(f);
        }
    }
}
