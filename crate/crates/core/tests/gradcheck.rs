//! Layer-by-layer gradient verification against central finite differences
//! (f64, h = 1e-5). Losses are random linear projections of the layer output
//! so every output element influences the scalar.

mod common;

use common::{check_param_gradients, fill_det, rel_err};
use ndarray::{Array2, Array4};
use transcycle::models::{init_parameters, Classifier, Discriminator, Generator};
use transcycle::nn::{
    BasicBlock, BatchNorm2d, Conv2d, ConvTranspose2d, Images, InstanceNorm2d, Linear, Mode,
    Parameters, ResBlock,
};
use transcycle::rng::SeedStreams;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_images(seed: u64, shape: (usize, usize, usize, usize)) -> Images<f64> {
    let mut a = Array4::<f64>::zeros(shape);
    fill_det(seed, a.as_slice_mut().unwrap());
    a
}

/// Fixed projection so loss = sum(y * proj) exercises every output element.
fn proj_like(seed: u64, y: &Images<f64>) -> Images<f64> {
    let mut p = Array4::<f64>::zeros(y.raw_dim());
    fill_det(seed, p.as_slice_mut().unwrap());
    p
}

fn dot(y: &Images<f64>, p: &Images<f64>) -> f64 {
    y.iter().zip(p.iter()).map(|(a, b)| a * b).sum()
}

#[test]
fn conv2d_param_and_input_gradients() {
    for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
        let mut conv = Conv2d::<f64>::new("t", 2, 3, 3, stride, pad, true);
        init_parameters(&mut conv_wrap(&mut conv), &mut SeedStreams::new(1).stream("i"));
        let x = rand_images(11, (2, 2, 7, 7));
        let (y0, cache) = conv.forward(x.clone());
        let proj = proj_like(5, &y0);
        let dx = conv.backward(cache, &proj, true);

        check_param_gradients(
            &mut conv_wrap(&mut conv),
            |w| dot(&w.0.forward(x.clone()).0, &proj),
            40,
            H,
            TOL,
        );

        // Input gradient via FD on a few pixels.
        for &flat in &[0usize, 13, 50, 97] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[flat] += H;
            let lp = dot(&conv.forward(xp.clone()).0, &proj);
            xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
            let lm = dot(&conv.forward(xp).0, &proj);
            let fd = (lp - lm) / (2.0 * H);
            let an = dx.as_slice().unwrap()[flat];
            assert!(rel_err(an, fd) < TOL, "dx[{flat}]: {an} vs {fd}");
        }
    }
}

// Small adapters so free-standing layers satisfy `Parameters`.
struct ConvWrap<'a>(&'a mut Conv2d<f64>);
fn conv_wrap(c: &mut Conv2d<f64>) -> ConvWrap<'_> {
    ConvWrap(c)
}
impl Parameters<f64> for ConvWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

struct ConvTWrap<'a>(&'a mut ConvTranspose2d<f64>);
impl Parameters<f64> for ConvTWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn conv_transpose_param_and_input_gradients() {
    let mut convt = ConvTranspose2d::<f64>::new("t", 3, 2, 3, 2, 1, 1, true);
    init_parameters(&mut ConvTWrap(&mut convt), &mut SeedStreams::new(2).stream("i"));
    let x = rand_images(21, (2, 3, 5, 5));
    let (y0, cache) = convt.forward(x.clone());
    assert_eq!(y0.shape(), [2, 2, 10, 10].as_slice());
    let proj = proj_like(6, &y0);
    let dx = convt.backward(cache, &proj, true);

    check_param_gradients(
        &mut ConvTWrap(&mut convt),
        |w| dot(&w.0.forward(x.clone()).0, &proj),
        40,
        H,
        TOL,
    );
    for &flat in &[0usize, 17, 60, 149] {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += H;
        let lp = dot(&convt.forward(xp.clone()).0, &proj);
        xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
        let lm = dot(&convt.forward(xp).0, &proj);
        let fd = (lp - lm) / (2.0 * H);
        let an = dx.as_slice().unwrap()[flat];
        assert!(rel_err(an, fd) < TOL, "dx[{flat}]: {an} vs {fd}");
    }
}

struct InWrap<'a>(&'a mut InstanceNorm2d<f64>);
impl Parameters<f64> for InWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn instance_norm_gradients() {
    let mut norm = InstanceNorm2d::<f64>::new("t", 3);
    init_parameters(&mut InWrap(&mut norm), &mut SeedStreams::new(3).stream("i"));
    // Non-trivial gain so the input gradient passes through gamma != 1.
    norm.gamma.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.7 + 0.2 * i as f64);
    let x = rand_images(31, (2, 3, 5, 5));
    let (y0, cache) = norm.forward(x.clone());
    let proj = proj_like(7, &y0);
    let dx = norm.backward(cache, &proj, true);

    check_param_gradients(
        &mut InWrap(&mut norm),
        |w| dot(&w.0.forward(x.clone()).0, &proj),
        6,
        H,
        TOL,
    );
    for &flat in &[0usize, 33, 88, 149] {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += H;
        let lp = dot(&norm.forward(xp.clone()).0, &proj);
        xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
        let lm = dot(&norm.forward(xp).0, &proj);
        let fd = (lp - lm) / (2.0 * H);
        let an = dx.as_slice().unwrap()[flat];
        assert!(rel_err(an, fd) < TOL, "dx[{flat}]: {an} vs {fd}");
    }
}

struct BnWrap<'a>(&'a mut BatchNorm2d<f64>);
impl Parameters<f64> for BnWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut bn = BatchNorm2d::<f64>::new("t", 3);
        init_parameters(&mut BnWrap(&mut bn), &mut SeedStreams::new(4).stream("i"));
        bn.gamma.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.8 + 0.1 * i as f64);
        // Non-default running stats so eval mode is exercised for real.
        bn.running_mean.iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * i as f64);
        bn.running_var.iter_mut().enumerate().for_each(|(i, v)| *v = 0.5 + 0.25 * i as f64);
        let x = rand_images(41, (4, 3, 3, 3));
        let (y0, cache) = bn.forward(x.clone(), mode);
        let proj = proj_like(8, &y0);
        let dx = bn.backward(cache, &proj, true);

        check_param_gradients(
            &mut BnWrap(&mut bn),
            |w| dot(&w.0.forward(x.clone(), mode).0, &proj),
            6,
            H,
            TOL,
        );
        for &flat in &[0usize, 29, 71, 107] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[flat] += H;
            let lp = dot(&bn.forward(xp.clone(), mode).0, &proj);
            xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
            let lm = dot(&bn.forward(xp, mode).0, &proj);
            let fd = (lp - lm) / (2.0 * H);
            let an = dx.as_slice().unwrap()[flat];
            assert!(rel_err(an, fd) < TOL, "{mode:?} dx[{flat}]: {an} vs {fd}");
        }
    }
}

struct LinWrap<'a>(&'a mut Linear<f64>);
impl Parameters<f64> for LinWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn linear_gradients() {
    let mut lin = Linear::<f64>::new("t", 6, 4);
    init_parameters(&mut LinWrap(&mut lin), &mut SeedStreams::new(5).stream("i"));
    let mut x = Array2::<f64>::zeros((3, 6));
    fill_det(51, x.as_slice_mut().unwrap());
    let (y0, cache) = lin.forward(x.clone());
    let mut proj = Array2::<f64>::zeros(y0.raw_dim());
    fill_det(9, proj.as_slice_mut().unwrap());
    let pdot = |y: &Array2<f64>| -> f64 { y.iter().zip(proj.iter()).map(|(a, b)| a * b).sum() };
    let dx = lin.backward(cache, &proj, true);

    check_param_gradients(&mut LinWrap(&mut lin), |w| pdot(&w.0.forward(x.clone()).0), 20, H, TOL);
    for &flat in &[0usize, 7, 17] {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += H;
        let lp = pdot(&lin.forward(xp.clone()).0);
        xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
        let lm = pdot(&lin.forward(xp).0);
        let fd = (lp - lm) / (2.0 * H);
        assert!(rel_err(dx.as_slice().unwrap()[flat], fd) < TOL);
    }
}

struct ResWrap<'a>(&'a mut ResBlock<f64>);
impl Parameters<f64> for ResWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn res_block_gradients() {
    let mut block = ResBlock::<f64>::new("t", 4);
    init_parameters(&mut ResWrap(&mut block), &mut SeedStreams::new(6).stream("i"));
    let x = rand_images(61, (2, 4, 5, 5));
    let (y0, cache) = block.forward(x.clone());
    let proj = proj_like(10, &y0);
    let dx = block.backward(cache, &proj, true);

    check_param_gradients(
        &mut ResWrap(&mut block),
        |w| dot(&w.0.forward(x.clone()).0, &proj),
        30,
        H,
        TOL,
    );
    for &flat in &[3usize, 77, 150] {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += H;
        let lp = dot(&block.forward(xp.clone()).0, &proj);
        xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
        let lm = dot(&block.forward(xp).0, &proj);
        let fd = (lp - lm) / (2.0 * H);
        assert!(rel_err(dx.as_slice().unwrap()[flat], fd) < TOL);
    }
}

struct BasicWrap<'a>(&'a mut BasicBlock<f64>);
impl Parameters<f64> for BasicWrap<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut transcycle::nn::Param<f64>)) {
        self.0.visit_params(f);
    }
}

#[test]
fn basic_block_gradients_with_downsample() {
    let mut block = BasicBlock::<f64>::new("t", 3, 5, 2);
    init_parameters(&mut BasicWrap(&mut block), &mut SeedStreams::new(7).stream("i"));
    let x = rand_images(71, (3, 3, 6, 6));
    let (y0, cache) = block.forward(x.clone(), Mode::Train);
    let proj = proj_like(11, &y0);
    let dx = block.backward(cache, &proj, true);

    check_param_gradients(
        &mut BasicWrap(&mut block),
        |w| dot(&w.0.forward(x.clone(), Mode::Train).0, &proj),
        30,
        H,
        TOL,
    );
    for &flat in &[5usize, 100, 300] {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += H;
        let lp = dot(&block.forward(xp.clone(), Mode::Train).0, &proj);
        xp.as_slice_mut().unwrap()[flat] -= 2.0 * H;
        let lm = dot(&block.forward(xp, Mode::Train).0, &proj);
        let fd = (lp - lm) / (2.0 * H);
        assert!(rel_err(dx.as_slice().unwrap()[flat], fd) < TOL);
    }
}

#[test]
fn full_generator_gradients() {
    let streams = SeedStreams::new(8);
    let mut g = Generator::<f64>::new(3, 4, 1);
    init_parameters(&mut g, &mut streams.stream("i"));
    let x = rand_images(81, (2, 3, 8, 8));
    let (y0, cache) = g.forward(&x).unwrap();
    let proj = proj_like(12, &y0);
    g.backward(cache, &proj, true);
    check_param_gradients(
        &mut g,
        |net| dot(&net.forward(&x).unwrap().0, &proj),
        30,
        H,
        TOL,
    );
}

#[test]
fn full_discriminator_gradients() {
    let streams = SeedStreams::new(9);
    let mut d = Discriminator::<f64>::new(3, 4);
    init_parameters(&mut d, &mut streams.stream("i"));
    let x = rand_images(91, (2, 3, 16, 16));
    let (y0, cache) = d.forward(&x).unwrap();
    let proj = proj_like(13, &y0);
    d.backward(cache, &proj, true);
    check_param_gradients(
        &mut d,
        |net| dot(&net.forward(&x).unwrap().0, &proj),
        30,
        H,
        TOL,
    );
}

#[test]
fn full_classifier_gradients() {
    let streams = SeedStreams::new(10);
    let mut c = Classifier::<f64>::new(3, 4, 5);
    init_parameters(&mut c, &mut streams.stream("i"));
    let x = rand_images(101, (3, 3, 16, 16));
    let (y0, cache) = c.forward(&x, Mode::Train).unwrap();
    let mut proj = Array2::<f64>::zeros(y0.raw_dim());
    fill_det(14, proj.as_slice_mut().unwrap());
    let pdot = |y: &Array2<f64>| -> f64 { y.iter().zip(proj.iter()).map(|(a, b)| a * b).sum() };
    c.backward(cache, &proj, true);
    check_param_gradients(
        &mut c,
        |net| pdot(&net.forward(&x, Mode::Train).unwrap().0),
        30,
        H,
        TOL,
    );
}
