//! The five networks: two translation generators, two patch discriminators,
//! and the residual classifier used for both the source and target domains.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::{
    rf, BasicBlock, BatchNorm2d, Conv2d, ConvTranspose2d, Images, InstanceNorm2d, Layer,
    LeakyRelu, Linear, LinearCache, Mode, Param, Parameters, Real, Relu, ResBlock, Seq, SeqCache,
    Tanh,
};
use crate::rng::SeedStreams;

/// Std of the zero-mean normal used for all convolution / linear weights.
pub const INIT_STD: f64 = 0.02;

fn shape_err(expected: impl Into<String>, got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

/// Image-to-image translator: two stride-2 downsamplings, a residual trunk,
/// two fractionally-strided upsamplings, tanh output. Output spatial shape
/// equals input spatial shape for sizes divisible by 4.
pub struct Generator<F: Real> {
    pub body: Seq<F>,
    pub channels: usize,
}

impl<F: Real> Generator<F> {
    pub fn new(channels: usize, base_width: usize, res_blocks: usize) -> Self {
        let w = base_width;
        let mut layers = vec![
            Layer::Conv(Conv2d::new("in", channels, w, 7, 1, 3, true)),
            Layer::InstNorm(InstanceNorm2d::new("in.norm", w)),
            Layer::Relu(Relu),
            Layer::Conv(Conv2d::new("down1", w, 2 * w, 3, 2, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("down1.norm", 2 * w)),
            Layer::Relu(Relu),
            Layer::Conv(Conv2d::new("down2", 2 * w, 4 * w, 3, 2, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("down2.norm", 4 * w)),
            Layer::Relu(Relu),
        ];
        for i in 0..res_blocks {
            layers.push(Layer::Res(ResBlock::new(&format!("res{i}"), 4 * w)));
        }
        layers.extend([
            Layer::ConvT(ConvTranspose2d::new("up1", 4 * w, 2 * w, 3, 2, 1, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("up1.norm", 2 * w)),
            Layer::Relu(Relu),
            Layer::ConvT(ConvTranspose2d::new("up2", 2 * w, w, 3, 2, 1, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("up2.norm", w)),
            Layer::Relu(Relu),
            Layer::Conv(Conv2d::new("out", w, channels, 7, 1, 3, true)),
            Layer::Tanh(Tanh),
        ]);
        Generator {
            body: Seq::new(layers),
            channels,
        }
    }

    fn check_input(&self, x: &Images<F>) -> Result<()> {
        let s = x.shape();
        if s[1] != self.channels || s[2] < 8 || s[3] < 8 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(shape_err(
                format!("(B, {}, H%4==0, W%4==0), H,W >= 8", self.channels),
                s,
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Images<F>) -> Result<(Images<F>, SeqCache<F>)> {
        self.check_input(x)?;
        Ok(self.body.forward(x.clone(), Mode::Train))
    }

    /// Forward without keeping caches, for evaluation and rendering.
    pub fn translate(&mut self, x: &Images<F>) -> Result<Images<F>> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&mut self, cache: SeqCache<F>, dy: &Images<F>, wrt_params: bool) -> Images<F> {
        self.body.backward(cache, dy, wrt_params)
    }
}

impl<F: Real> Parameters<F> for Generator<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.body.visit_params(f);
    }
}

/// Patch critic: three stride-2 convolutions and a final stride-1 scoring
/// convolution produce a logit map of overlapping-patch scores. With 4x4
/// kernels the map is 7x7 for 68x68 input and each logit sees a 46x46 patch.
pub struct Discriminator<F: Real> {
    pub body: Seq<F>,
    pub channels: usize,
}

impl<F: Real> Discriminator<F> {
    pub fn new(channels: usize, base_width: usize) -> Self {
        let d = base_width;
        let layers = vec![
            Layer::Conv(Conv2d::new("d1", channels, d, 4, 2, 1, true)),
            Layer::LeakyRelu(LeakyRelu::new(0.2)),
            Layer::Conv(Conv2d::new("d2", d, 2 * d, 4, 2, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("d2.norm", 2 * d)),
            Layer::LeakyRelu(LeakyRelu::new(0.2)),
            Layer::Conv(Conv2d::new("d3", 2 * d, 4 * d, 4, 2, 1, true)),
            Layer::InstNorm(InstanceNorm2d::new("d3.norm", 4 * d)),
            Layer::LeakyRelu(LeakyRelu::new(0.2)),
            Layer::Conv(Conv2d::new("score", 4 * d, 1, 4, 1, 1, true)),
        ];
        Discriminator {
            body: Seq::new(layers),
            channels,
        }
    }

    /// Patch-logit receptive field in input pixels.
    pub const RECEPTIVE_FIELD: usize = 46;

    fn check_input(&self, x: &Images<F>) -> Result<()> {
        let s = x.shape();
        if s[1] != self.channels || s[2] < 16 || s[3] < 16 {
            return Err(shape_err(format!("(B, {}, >=16, >=16)", self.channels), s));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Images<F>) -> Result<(Images<F>, SeqCache<F>)> {
        self.check_input(x)?;
        Ok(self.body.forward(x.clone(), Mode::Train))
    }

    pub fn score(&mut self, x: &Images<F>) -> Result<Images<F>> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&mut self, cache: SeqCache<F>, dy: &Images<F>, wrt_params: bool) -> Images<F> {
        self.body.backward(cache, dy, wrt_params)
    }
}

impl<F: Real> Parameters<F> for Discriminator<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.body.visit_params(f);
    }
}

pub struct ClassifierCache<F: Real> {
    features: SeqCache<F>,
    gap_hw: (usize, usize),
    lin: LinearCache<F>,
}

/// 18-layer residual classifier adapted to small chips: 3x3 stride-1 stem
/// (no early max-pool), four 2-block stages each halving resolution, global
/// average pool, linear head.
pub struct Classifier<F: Real> {
    pub features: Seq<F>,
    pub head: Linear<F>,
    pub channels: usize,
    pub num_classes: usize,
    pub feat_dim: usize,
    pub trainable: bool,
}

impl<F: Real> Classifier<F> {
    pub fn new(channels: usize, base_width: usize, num_classes: usize) -> Self {
        let w = base_width;
        let mut layers = vec![
            Layer::Conv(Conv2d::new("stem", channels, w, 3, 1, 1, false)),
            Layer::BatchNorm(BatchNorm2d::new("stem.bn", w)),
            Layer::Relu(Relu),
        ];
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut in_w = w;
        for (stage, &out_w) in widths.iter().enumerate() {
            layers.push(Layer::Basic(BasicBlock::new(
                &format!("s{stage}.b0"),
                in_w,
                out_w,
                2,
            )));
            layers.push(Layer::Basic(BasicBlock::new(
                &format!("s{stage}.b1"),
                out_w,
                out_w,
                1,
            )));
            in_w = out_w;
        }
        Classifier {
            features: Seq::new(layers),
            head: Linear::new("head", 8 * w, num_classes),
            channels,
            num_classes,
            feat_dim: 8 * w,
            trainable: true,
        }
    }

    fn check_input(&self, x: &Images<F>) -> Result<()> {
        let s = x.shape();
        if s[1] != self.channels || s[2] < 16 || s[3] < 16 {
            return Err(shape_err(format!("(B, {}, >=16, >=16)", self.channels), s));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Images<F>, mode: Mode) -> Result<(Array2<F>, ClassifierCache<F>)> {
        self.check_input(x)?;
        let (feat, features) = self.features.forward(x.clone(), mode);
        let (b, c, h, w) = {
            let s = feat.shape();
            (s[0], s[1], s[2], s[3])
        };
        // Global average pool.
        let scale = rf::<F>(1.0 / (h * w) as f64);
        let mut pooled = Array2::<F>::zeros((b, c));
        for (bi, sample) in feat.axis_iter(Axis(0)).enumerate() {
            for (ci, chan) in sample.axis_iter(Axis(0)).enumerate() {
                pooled[[bi, ci]] = chan.iter().copied().sum::<F>() * scale;
            }
        }
        let (logits, lin) = self.head.forward(pooled);
        Ok((
            logits,
            ClassifierCache {
                features,
                gap_hw: (h, w),
                lin,
            },
        ))
    }

    /// Logits without caches (eval mode).
    pub fn predict(&mut self, x: &Images<F>) -> Result<Array2<F>> {
        self.forward(x, Mode::Eval).map(|(l, _)| l)
    }

    /// Penultimate (pooled) features, eval mode; the default FID extractor.
    pub fn penultimate(&mut self, x: &Images<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let (feat, _) = self.features.forward(x.clone(), Mode::Eval);
        let (b, c, h, w) = {
            let s = feat.shape();
            (s[0], s[1], s[2], s[3])
        };
        let scale = rf::<F>(1.0 / (h * w) as f64);
        let mut pooled = Array2::<F>::zeros((b, c));
        for (bi, sample) in feat.axis_iter(Axis(0)).enumerate() {
            for (ci, chan) in sample.axis_iter(Axis(0)).enumerate() {
                pooled[[bi, ci]] = chan.iter().copied().sum::<F>() * scale;
            }
        }
        Ok(pooled)
    }

    pub fn backward(
        &mut self,
        cache: ClassifierCache<F>,
        dlogits: &Array2<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let dpooled = self.head.backward(cache.lin, dlogits, wrt_params);
        let (h, w) = cache.gap_hw;
        let (b, c) = (dpooled.shape()[0], dpooled.shape()[1]);
        let scale = rf::<F>(1.0 / (h * w) as f64);
        let mut dfeat = Images::<F>::zeros((b, c, h, w));
        for (bi, mut sample) in dfeat.axis_iter_mut(Axis(0)).enumerate() {
            for (ci, mut chan) in sample.axis_iter_mut(Axis(0)).enumerate() {
                chan.fill(dpooled[[bi, ci]] * scale);
            }
        }
        self.features.backward(cache.features, &dfeat, wrt_params)
    }
}

impl<F: Real> Parameters<F> for Classifier<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.features.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<F>)) {
        self.features.visit_buffers(f);
    }
}

/// Draw fresh parameters: weights from N(0, INIT_STD), biases and shift
/// terms zero, normalization gains one (identity behavior at init).
pub fn init_parameters<F: Real>(net: &mut impl Parameters<F>, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0f64, INIT_STD).unwrap();
    net.visit_params(&mut |p: &mut Param<F>| {
        if p.name.ends_with(".gamma") {
            p.value.fill(F::one());
        } else if p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            p.value.fill(F::zero());
        } else {
            for v in p.value.iter_mut() {
                *v = rf::<F>(normal.sample(rng));
            }
        }
    });
}

/// Copy every parameter and buffer of `source` into a new classifier that
/// starts trainable; `source` is frozen from this point on.
pub fn init_target_from_source<F: Real>(source: &mut Classifier<F>) -> Classifier<F> {
    let mut target = Classifier::new(source.channels, source.feat_dim / 8, source.num_classes);
    let mut values: Vec<ndarray::ArrayD<F>> = Vec::new();
    source.visit_params(&mut |p| values.push(p.value.clone()));
    let mut it = values.into_iter();
    target.visit_params(&mut |p| p.value = it.next().expect("same parameter count"));
    let mut buffers: Vec<ndarray::ArrayD<F>> = Vec::new();
    source.visit_buffers(&mut |_, b| buffers.push(b.clone()));
    let mut it = buffers.into_iter();
    target.visit_buffers(&mut |_, b| *b = it.next().expect("same buffer count"));
    source.trainable = false;
    target.trainable = true;
    target
}

/// SHA-256 over all parameters and buffers in visit order; detects any
/// mutation of a frozen network.
pub fn state_digest<F: Real>(net: &mut impl Parameters<F>) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    net.visit_params(&mut |p| {
        hasher.update(p.name.as_bytes());
        for v in p.value.iter() {
            hasher.update(v.to_f64c().to_le_bytes());
        }
    });
    net.visit_buffers(&mut |name, b| {
        hasher.update(name.as_bytes());
        for v in b.iter() {
            hasher.update(v.to_f64c().to_le_bytes());
        }
    });
    hasher.finalize().into()
}

/// The five networks plus frozen/trainable bookkeeping.
pub struct ModelBundle<F: Real> {
    /// Source-to-target translator.
    pub gen_st: Generator<F>,
    /// Target-to-source translator.
    pub gen_ts: Generator<F>,
    /// Discriminates real vs translated source-domain images.
    pub disc_source: Discriminator<F>,
    /// Discriminates real vs translated target-domain images.
    pub disc_target: Discriminator<F>,
    pub cls_source: Classifier<F>,
    pub cls_target: Classifier<F>,
}

impl<F: Real> ModelBundle<F> {
    /// Fresh bundle with per-network named init streams. The target
    /// classifier starts as a copy of the (still untrained) source one; the
    /// trainer re-copies after pretraining.
    pub fn new(cfg: &ExperimentConfig, streams: &SeedStreams) -> Self {
        let channels = 3;
        let m = &cfg.model;
        let mut gen_st = Generator::new(channels, m.gen_base_width, m.gen_res_blocks);
        let mut gen_ts = Generator::new(channels, m.gen_base_width, m.gen_res_blocks);
        let mut disc_source = Discriminator::new(channels, m.disc_base_width);
        let mut disc_target = Discriminator::new(channels, m.disc_base_width);
        let mut cls_source = Classifier::new(channels, m.classifier_base_width, cfg.num_classes);
        init_parameters(&mut gen_st, &mut streams.stream("init/gen_st"));
        init_parameters(&mut gen_ts, &mut streams.stream("init/gen_ts"));
        init_parameters(&mut disc_source, &mut streams.stream("init/disc_source"));
        init_parameters(&mut disc_target, &mut streams.stream("init/disc_target"));
        init_parameters(&mut cls_source, &mut streams.stream("init/cls_source"));
        let cls_target = init_target_from_source(&mut cls_source);
        ModelBundle {
            gen_st,
            gen_ts,
            disc_source,
            disc_target,
            cls_source,
            cls_target,
        }
    }

    /// Layer table with output shapes and parameter counts, dumped as a text
    /// artifact for every run.
    pub fn arch_summary(&mut self, chip: usize) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let mut section = |name: &str, net: &mut dyn Parameters<F>| {
            let mut total = 0usize;
            let mut rows = String::new();
            net.visit_params(&mut |p| {
                total += p.numel();
                let _ = writeln!(rows, "  {:<28} {:>10} {:?}", p.name, p.numel(), p.value.shape());
            });
            let _ = writeln!(out, "[{name}] parameters: {total}");
            out.push_str(&rows);
        };
        section("generator source->target", &mut self.gen_st);
        section("generator target->source", &mut self.gen_ts);
        section("discriminator source", &mut self.disc_source);
        section("discriminator target", &mut self.disc_target);
        section("classifier source", &mut self.cls_source);
        section("classifier target", &mut self.cls_target);
        let half = chip / 2;
        let quarter = chip / 4;
        let d8 = (quarter + 2 - 4) / 2 + 1;
        let score = d8 + 2 - 4 + 1;
        out.push_str(&format!(
            "generator trunk: {chip} -> {half} -> {quarter} -> {half} -> {chip}\n\
             discriminator score map: {score}x{score}, receptive field {rf}x{rf}\n",
            rf = Discriminator::<F>::RECEPTIVE_FIELD,
        ));
        out
    }
}
