//! Strided convolution and fractionally-strided (transposed) convolution.
//!
//! Both lower onto GEMM via im2col/col2im. Per-sample work runs in parallel
//! (each sample writes disjoint output); weight-gradient contributions are
//! computed per sample and reduced serially in sample order so results do
//! not depend on thread scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView3, ArrayViewMut3, Axis, Ix1, Ix2, Zip};

use super::{Images, Param, Real};

/// Spatial output size of a convolution: floor((n + 2p - k) / s) + 1.
pub fn conv_out_size(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(n + 2 * pad >= kernel, "input {n} too small for kernel {kernel}");
    (n + 2 * pad - kernel) / stride + 1
}

/// Spatial output size of a transposed convolution.
pub fn conv_transpose_out_size(
    n: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> usize {
    (n - 1) * stride + kernel + output_pad - 2 * pad
}

/// Extract sliding patches of `x` (C, H, W) into a (C*K*K, OH*OW) matrix.
/// Grid positions map through `big = small * stride + k_off - pad`.
fn im2col<F: Real>(
    x: &ArrayView3<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::<F>::zeros((c_in * kernel * kernel, oh * ow));
    let xs = x.as_slice().expect("contiguous sample");
    let cs = cols.as_slice_mut().expect("fresh allocation");
    for c in 0..c_in {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let row_base = row * oh * ow;
                // Valid output-column range keeps big-grid coords in bounds.
                let ow_lo = if pad > kj { (pad - kj + stride - 1) / stride } else { 0 };
                let ow_hi = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(ow)
                } else {
                    0
                };
                if ow_hi <= ow_lo {
                    continue;
                }
                let run = ow_hi - ow_lo;
                for ohi in 0..oh {
                    let ih = (ohi * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let x_base = (c * h + ih as usize) * w;
                    let iw0 = ow_lo * stride + kj - pad;
                    let dst = &mut cs[row_base + ohi * ow + ow_lo..row_base + ohi * ow + ow_hi];
                    if stride == 1 {
                        dst.copy_from_slice(&xs[x_base + iw0..x_base + iw0 + run]);
                    } else {
                        let src = &xs[x_base + iw0..];
                        for (d, s) in dst.iter_mut().zip(src.iter().step_by(stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add patch columns back onto the big grid.
fn col2im_add<F: Real>(
    cols: &Array2<F>,
    mut target: ArrayViewMut3<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (c_in, h, w) = (target.shape()[0], target.shape()[1], target.shape()[2]);
    let cs = cols.as_slice().expect("contiguous cols");
    let ts = target.as_slice_mut().expect("contiguous sample");
    for c in 0..c_in {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let row_base = row * oh * ow;
                let ow_lo = if pad > kj { (pad - kj + stride - 1) / stride } else { 0 };
                let ow_hi = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(ow)
                } else {
                    0
                };
                if ow_hi <= ow_lo {
                    continue;
                }
                let run = ow_hi - ow_lo;
                for ohi in 0..oh {
                    let ih = (ohi * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let t_base = (c * h + ih as usize) * w;
                    let iw0 = ow_lo * stride + kj - pad;
                    let src = &cs[row_base + ohi * ow + ow_lo..row_base + ohi * ow + ow_hi];
                    if stride == 1 {
                        let dst = &mut ts[t_base + iw0..t_base + iw0 + run];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += *s;
                        }
                    } else {
                        let dst = &mut ts[t_base + iw0..];
                        for (d, s) in dst.iter_mut().step_by(stride).zip(src.iter()) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Packed GEMM wastes most of its kernel when one dimension is a handful of
/// image channels; below this many output channels the conv uses plain
/// axpy/dot loops instead.
const SMALL_CHANNELS: usize = 4;

/// out (OC, N) = w (OC, K) * cols (K, N) via row axpys; fast when OC is tiny.
fn small_m_mat_mul<F: Real>(w: &ndarray::ArrayView2<F>, cols: &Array2<F>, out: &mut [F], n: usize) {
    let k = w.shape()[1];
    let cs = cols.as_slice().expect("contiguous cols");
    for (oc, wrow) in w.rows().into_iter().enumerate() {
        let orow = &mut out[oc * n..(oc + 1) * n];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv == F::zero() {
                continue;
            }
            let crow = &cs[r * n..(r + 1) * n];
            for (o, &c) in orow.iter_mut().zip(crow.iter()) {
                *o += wv * c;
            }
        }
        let _ = k;
    }
}

pub struct ConvCache<F: Real> {
    input: Images<F>,
}

/// 2-D convolution, square kernel, zero padding.
/// Weight layout: (out_channels, in_channels * k * k).
#[derive(Debug, Clone)]
pub struct Conv2d<F: Real> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Real> Conv2d<F> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[
                out_channels,
                in_channels * kernel * kernel,
            ])),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])),
            )
        });
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_size(h, self.kernel, self.stride, self.pad),
            conv_out_size(w, self.kernel, self.stride, self.pad),
        )
    }

    pub fn forward(&self, x: Images<F>) -> (Images<F>, ConvCache<F>) {
        let (b, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let mut out = Images::<F>::zeros((b, self.out_channels, oh, ow));
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.pad);
        Zip::from(out.axis_iter_mut(Axis(0)))
            .and(x.axis_iter(Axis(0)))
            .into_par_iter()
            .for_each(|(o, xs)| {
                let cols = im2col(&xs, kernel, stride, pad, oh, ow);
                let mut o2 = o.into_shape((w2.shape()[0], oh * ow)).unwrap();
                if self.out_channels <= SMALL_CHANNELS {
                    small_m_mat_mul(&w2, &cols, o2.as_slice_mut().unwrap(), oh * ow);
                } else {
                    general_mat_mul(F::one(), &w2, &cols.view(), F::zero(), &mut o2);
                }
            });
        if let Some(ref bias) = self.bias {
            let bv = bias.value.view().into_dimensionality::<Ix1>().unwrap();
            for mut sample in out.axis_iter_mut(Axis(0)) {
                for (mut ch, &bc) in sample.axis_iter_mut(Axis(0)).zip(bv.iter()) {
                    ch.mapv_inplace(|v| v + bc);
                }
            }
        }
        (out, ConvCache { input: x })
    }

    pub fn backward(&mut self, cache: ConvCache<F>, dy: &Images<F>, wrt_params: bool) -> Images<F> {
        let x = cache.input;
        let (b, _c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(dy.shape(), [b, self.out_channels, oh, ow].as_slice());
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.pad);

        let mut dx = Images::<F>::zeros(x.raw_dim());
        // Per-sample weight-gradient pieces, reduced in sample order below.
        let dw_parts: Vec<Option<Array2<F>>> = Zip::from(dx.axis_iter_mut(Axis(0)))
            .and(dy.axis_iter(Axis(0)))
            .and(x.axis_iter(Axis(0)))
            .into_par_iter()
            .map(|(dxs, dys, xs)| {
                let dy2 = dys.into_shape((self.out_channels, oh * ow)).unwrap();
                let n = oh * ow;
                let small = self.out_channels <= SMALL_CHANNELS;
                let mut dcols = Array2::<F>::zeros((w2.shape()[1], n));
                if small {
                    // K = out_channels is tiny: accumulate row axpys.
                    let dc = dcols.as_slice_mut().unwrap();
                    for (oc, dyrow) in dy2.rows().into_iter().enumerate() {
                        let dyr = dyrow.to_slice().unwrap();
                        for (r, &wv) in w2.row(oc).iter().enumerate() {
                            if wv == F::zero() {
                                continue;
                            }
                            for (o, &d) in dc[r * n..(r + 1) * n].iter_mut().zip(dyr.iter()) {
                                *o += wv * d;
                            }
                        }
                    }
                } else {
                    general_mat_mul(F::one(), &w2.t(), &dy2, F::zero(), &mut dcols);
                }
                col2im_add(&dcols, dxs, kernel, stride, pad, oh, ow);
                if wrt_params {
                    let cols = im2col(&xs, kernel, stride, pad, oh, ow);
                    let mut dw = Array2::<F>::zeros((self.out_channels, w2.shape()[1]));
                    if small {
                        let cs = cols.as_slice().unwrap();
                        for (oc, dyrow) in dy2.rows().into_iter().enumerate() {
                            let dyr = dyrow.to_slice().unwrap();
                            for r in 0..w2.shape()[1] {
                                let crow = &cs[r * n..(r + 1) * n];
                                let mut acc = F::zero();
                                for (&d, &c) in dyr.iter().zip(crow.iter()) {
                                    acc += d * c;
                                }
                                dw[[oc, r]] = acc;
                            }
                        }
                    } else {
                        general_mat_mul(F::one(), &dy2, &cols.t(), F::zero(), &mut dw);
                    }
                    Some(dw)
                } else {
                    None
                }
            })
            .collect();
        if wrt_params {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .unwrap();
            for part in dw_parts.into_iter().flatten() {
                wgrad += &part;
            }
            if let Some(ref mut bias) = self.bias {
                let mut bgrad = bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
                for sample in dy.axis_iter(Axis(0)) {
                    for (g, ch) in bgrad.iter_mut().zip(sample.axis_iter(Axis(0))) {
                        *g += ch.iter().copied().sum();
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        if let Some(ref mut b) = self.bias {
            f(b);
        }
    }
}

pub struct ConvTCache<F: Real> {
    input: Images<F>,
}

/// Fractionally-strided convolution (stride-s upsampling).
/// Weight layout: (in_channels, out_channels * k * k).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Real> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl<F: Real> ConvTranspose2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        bias: bool,
    ) -> Self {
        assert!(output_pad < stride, "output_pad must be < stride");
        let weight = Param::new(
            format!("{name}.weight"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[
                in_channels,
                out_channels * kernel * kernel,
            ])),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])),
            )
        });
        ConvTranspose2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            output_pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_transpose_out_size(h, self.kernel, self.stride, self.pad, self.output_pad),
            conv_transpose_out_size(w, self.kernel, self.stride, self.pad, self.output_pad),
        )
    }

    pub fn forward(&self, x: Images<F>) -> (Images<F>, ConvTCache<F>) {
        let (b, c, ih, iw) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        assert_eq!(c, self.in_channels, "conv-transpose input channels");
        let (oh, ow) = self.out_hw(ih, iw);
        let mut out = Images::<F>::zeros((b, self.out_channels, oh, ow));
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.pad);
        Zip::from(out.axis_iter_mut(Axis(0)))
            .and(x.axis_iter(Axis(0)))
            .into_par_iter()
            .for_each(|(o, xs)| {
                let x2 = xs.into_shape((self.in_channels, ih * iw)).unwrap();
                let mut cols = Array2::<F>::zeros((w2.shape()[1], ih * iw));
                general_mat_mul(F::one(), &w2.t(), &x2, F::zero(), &mut cols);
                // The input grid plays the conv-output role here.
                col2im_add(&cols, o, kernel, stride, pad, ih, iw);
            });
        if let Some(ref bias) = self.bias {
            let bv = bias.value.view().into_dimensionality::<Ix1>().unwrap();
            for mut sample in out.axis_iter_mut(Axis(0)) {
                for (mut ch, &bc) in sample.axis_iter_mut(Axis(0)).zip(bv.iter()) {
                    ch.mapv_inplace(|v| v + bc);
                }
            }
        }
        (out, ConvTCache { input: x })
    }

    pub fn backward(
        &mut self,
        cache: ConvTCache<F>,
        dy: &Images<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let x = cache.input;
        let (b, _c, ih, iw) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let (oh, ow) = self.out_hw(ih, iw);
        assert_eq!(dy.shape(), [b, self.out_channels, oh, ow].as_slice());
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.pad);

        let mut dx = Images::<F>::zeros(x.raw_dim());
        let dw_parts: Vec<Option<Array2<F>>> = Zip::from(dx.axis_iter_mut(Axis(0)))
            .and(dy.axis_iter(Axis(0)))
            .and(x.axis_iter(Axis(0)))
            .into_par_iter()
            .map(|(dxs, dys, xs)| {
                let cols_dy = im2col(&dys, kernel, stride, pad, ih, iw);
                let mut dx2 = dxs.into_shape((self.in_channels, ih * iw)).unwrap();
                general_mat_mul(F::one(), &w2, &cols_dy.view(), F::zero(), &mut dx2);
                if wrt_params {
                    let x2 = xs.into_shape((self.in_channels, ih * iw)).unwrap();
                    let mut dw = Array2::<F>::zeros((self.in_channels, w2.shape()[1]));
                    general_mat_mul(F::one(), &x2, &cols_dy.t(), F::zero(), &mut dw);
                    Some(dw)
                } else {
                    None
                }
            })
            .collect();
        if wrt_params {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .unwrap();
            for part in dw_parts.into_iter().flatten() {
                wgrad += &part;
            }
            if let Some(ref mut bias) = self.bias {
                let mut bgrad = bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
                for sample in dy.axis_iter(Axis(0)) {
                    for (g, ch) in bgrad.iter_mut().zip(sample.axis_iter(Axis(0))) {
                        *g += ch.iter().copied().sum();
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        if let Some(ref mut b) = self.bias {
            f(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn conv_shapes() {
        assert_eq!(conv_out_size(68, 3, 2, 1), 34);
        assert_eq!(conv_out_size(34, 3, 2, 1), 17);
        assert_eq!(conv_out_size(68, 7, 1, 3), 68);
        assert_eq!(conv_transpose_out_size(17, 3, 2, 1, 1), 34);
        assert_eq!(conv_transpose_out_size(34, 3, 2, 1, 1), 68);
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // 1x1 kernel with weight 1 is the identity map.
        let mut conv = Conv2d::<f64>::new("t", 1, 1, 1, 1, 0, true);
        conv.weight.value.fill(1.0);
        let x = Array4::from_shape_fn((2, 1, 4, 4), |(b, _, i, j)| (b + i * 4 + j) as f64 * 0.1);
        let (y, _) = conv.forward(x.clone());
        assert_eq!(y, x);
    }

    #[test]
    fn conv_known_3x3_sum() {
        // All-ones 3x3 kernel on all-ones input counts the valid neighborhood.
        let mut conv = Conv2d::<f64>::new("t", 1, 1, 3, 1, 1, false);
        conv.weight.value.fill(1.0);
        let x = Array4::from_elem((1, 1, 3, 3), 1.0);
        let (y, _) = conv.forward(x);
        // Corner sees 4 in-bounds taps, edge 6, center 9.
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 0, 1]], 6.0);
        assert_eq!(y[[0, 0, 1, 1]], 9.0);
    }

    #[test]
    fn conv_transpose_matches_manual_upsample() {
        // Stride-2 transposed conv with a delta kernel scatters the input.
        let mut convt = ConvTranspose2d::<f64>::new("t", 1, 1, 3, 2, 1, 1, false);
        // Kernel that is 1 at its center (ki=1, kj=1).
        convt.weight.value[[0, 4]] = 1.0;
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| (1 + i * 2 + j) as f64);
        let (y, _) = convt.forward(x);
        assert_eq!(y.shape(), [1, 1, 4, 4].as_slice());
        // Center taps land at even coordinates (i*2+1-1).
        assert_eq!(y[[0, 0, 0, 0]], 1.0);
        assert_eq!(y[[0, 0, 0, 2]], 2.0);
        assert_eq!(y[[0, 0, 2, 0]], 3.0);
        assert_eq!(y[[0, 0, 2, 2]], 4.0);
        assert_eq!(y[[0, 0, 1, 1]], 0.0);
    }
}
