//! Residual blocks: the translator variant (instance norm, no activation on
//! the skip sum) and the classifier variant (batch norm, post-sum ReLU,
//! optional projection shortcut).

use super::act::{Relu, ReluCache};
use super::conv::{Conv2d, ConvCache};
use super::norm::{BatchNorm2d, BatchNormCache, InstanceNorm2d, InstNormCache};
use super::{Images, Mode, Param, Real};

pub struct ResBlockCache<F: Real> {
    c1: ConvCache<F>,
    n1: InstNormCache<F>,
    r1: ReluCache<F>,
    c2: ConvCache<F>,
    n2: InstNormCache<F>,
}

/// Translator residual block: x + IN(conv(ReLU(IN(conv(x))))).
#[derive(Debug, Clone)]
pub struct ResBlock<F: Real> {
    conv1: Conv2d<F>,
    norm1: InstanceNorm2d<F>,
    conv2: Conv2d<F>,
    norm2: InstanceNorm2d<F>,
    relu: Relu,
}

impl<F: Real> ResBlock<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, 1, true),
            norm1: InstanceNorm2d::new(&format!("{name}.norm1"), channels),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 1, 1, true),
            norm2: InstanceNorm2d::new(&format!("{name}.norm2"), channels),
            relu: Relu,
        }
    }

    pub fn forward(&self, x: Images<F>) -> (Images<F>, ResBlockCache<F>) {
        let (h1, c1) = self.conv1.forward(x.clone());
        let (h2, n1) = self.norm1.forward(h1);
        let (h3, r1) = self.relu.forward(h2);
        let (h4, c2) = self.conv2.forward(h3);
        let (branch, n2) = self.norm2.forward(h4);
        let y = x + &branch;
        (y, ResBlockCache { c1, n1, r1, c2, n2 })
    }

    pub fn backward(
        &mut self,
        cache: ResBlockCache<F>,
        dy: &Images<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let d = self.norm2.backward(cache.n2, dy, wrt_params);
        let d = self.conv2.backward(cache.c2, &d, wrt_params);
        let d = self.relu.backward(cache.r1, &d);
        let d = self.norm1.backward(cache.n1, &d, wrt_params);
        let mut dx = self.conv1.backward(cache.c1, &d, wrt_params);
        dx += dy;
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.conv1.visit_params(f);
        self.norm1.visit_params(f);
        self.conv2.visit_params(f);
        self.norm2.visit_params(f);
    }
}

pub struct BasicBlockCache<F: Real> {
    c1: ConvCache<F>,
    b1: BatchNormCache<F>,
    r1: ReluCache<F>,
    c2: ConvCache<F>,
    b2: BatchNormCache<F>,
    down: Option<(ConvCache<F>, BatchNormCache<F>)>,
    r_out: ReluCache<F>,
}

/// Classifier residual block: ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x)).
#[derive(Debug, Clone)]
pub struct BasicBlock<F: Real> {
    conv1: Conv2d<F>,
    bn1: BatchNorm2d<F>,
    conv2: Conv2d<F>,
    bn2: BatchNorm2d<F>,
    down: Option<(Conv2d<F>, BatchNorm2d<F>)>,
    relu: Relu,
}

impl<F: Real> BasicBlock<F> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let down = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::new(
                    &format!("{name}.down.conv"),
                    in_channels,
                    out_channels,
                    1,
                    stride,
                    0,
                    false,
                ),
                BatchNorm2d::new(&format!("{name}.down.bn"), out_channels),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(
                &format!("{name}.conv1"),
                in_channels,
                out_channels,
                3,
                stride,
                1,
                false,
            ),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_channels),
            conv2: Conv2d::new(
                &format!("{name}.conv2"),
                out_channels,
                out_channels,
                3,
                1,
                1,
                false,
            ),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_channels),
            down,
            relu: Relu,
        }
    }

    pub fn forward(&mut self, x: Images<F>, mode: Mode) -> (Images<F>, BasicBlockCache<F>) {
        let (h1, c1) = self.conv1.forward(x.clone());
        let (h2, b1) = self.bn1.forward(h1, mode);
        let (h3, r1) = self.relu.forward(h2);
        let (h4, c2) = self.conv2.forward(h3);
        let (main, b2) = self.bn2.forward(h4, mode);
        let (shortcut, down) = match self.down {
            Some((ref conv, ref mut bn)) => {
                let (s1, dc) = conv.forward(x);
                let (s2, db) = bn.forward(s1, mode);
                (s2, Some((dc, db)))
            }
            None => (x, None),
        };
        let (y, r_out) = self.relu.forward(main + &shortcut);
        (
            y,
            BasicBlockCache {
                c1,
                b1,
                r1,
                c2,
                b2,
                down,
                r_out,
            },
        )
    }

    pub fn backward(
        &mut self,
        cache: BasicBlockCache<F>,
        dy: &Images<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let dsum = self.relu.backward(cache.r_out, dy);
        let d = self.bn2.backward(cache.b2, &dsum, wrt_params);
        let d = self.conv2.backward(cache.c2, &d, wrt_params);
        let d = self.relu.backward(cache.r1, &d);
        let d = self.bn1.backward(cache.b1, &d, wrt_params);
        let mut dx = self.conv1.backward(cache.c1, &d, wrt_params);
        match (self.down.as_mut(), cache.down) {
            (Some((conv, bn)), Some((dc, db))) => {
                let d = bn.backward(db, &dsum, wrt_params);
                dx += &conv.backward(dc, &d, wrt_params);
            }
            (None, None) => dx += &dsum,
            _ => unreachable!("shortcut cache shape"),
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((ref mut conv, ref mut bn)) = self.down {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<F>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        if let Some((_, ref mut bn)) = self.down {
            bn.visit_buffers(f);
        }
    }
}
