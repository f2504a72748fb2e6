//! Instance and batch normalization.
//!
//! Instance norm normalizes each (sample, channel) plane over H*W and has no
//! running state, so train and eval behave identically. Batch norm keeps
//! running statistics for eval mode; its eval-mode backward still propagates
//! data gradients (needed when a frozen classifier sits inside the loss
//! graph), it just reduces to a fixed affine map.

use ndarray::{ArrayD, Ix1};

use super::{rf, Images, Mode, Param, Real};

const EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// dx for y = gamma * xhat + beta where xhat was normalized over a group of
/// n elements with 1/n (biased) variance:
/// dx_i = invstd/n * (n*dxh_i - sum(dxh) - xhat_i * sum(dxh*xhat)).
#[inline]
fn norm_group_backward<F: Real>(
    xhat: &[F],
    dxh: &[F],
    invstd: F,
    dx: &mut [F],
) {
    let n = rf::<F>(xhat.len() as f64);
    let mut sum_dxh = F::zero();
    let mut sum_dxh_xhat = F::zero();
    for (&d, &xh) in dxh.iter().zip(xhat.iter()) {
        sum_dxh += d;
        sum_dxh_xhat += d * xh;
    }
    let scale = invstd / n;
    for ((out, &d), &xh) in dx.iter_mut().zip(dxh.iter()).zip(xhat.iter()) {
        *out = scale * (n * d - sum_dxh - xh * sum_dxh_xhat);
    }
}

pub struct InstNormCache<F: Real> {
    xhat: Images<F>,
    invstd: Vec<F>, // (B*C), sample-major
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub channels: usize,
}

impl<F: Real> InstanceNorm2d<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            channels,
        }
    }

    pub fn forward(&self, x: Images<F>) -> (Images<F>, InstNormCache<F>) {
        let (b, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        assert_eq!(c, self.channels);
        let n = h * w;
        let mut xhat = x;
        let mut invstd = Vec::with_capacity(b * c);
        let eps = rf::<F>(EPS);
        let nf = rf::<F>(n as f64);
        {
            let data = xhat.as_slice_mut().expect("contiguous");
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &mut data[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                    let mut mean = F::zero();
                    for &v in plane.iter() {
                        mean += v;
                    }
                    mean /= nf;
                    let mut var = F::zero();
                    for &v in plane.iter() {
                        let d = v - mean;
                        var += d * d;
                    }
                    var /= nf;
                    let is = (var + eps).sqrt().recip();
                    invstd.push(is);
                    for v in plane.iter_mut() {
                        *v = (*v - mean) * is;
                    }
                }
            }
        }
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = xhat.clone();
        {
            let data = y.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let (g, be) = (gamma[ci], beta[ci]);
                    for v in data[(bi * c + ci) * n..(bi * c + ci + 1) * n].iter_mut() {
                        *v = g * *v + be;
                    }
                }
            }
        }
        (y, InstNormCache { xhat, invstd })
    }

    pub fn backward(
        &mut self,
        cache: InstNormCache<F>,
        dy: &Images<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let (b, c, h, w) = {
            let s = cache.xhat.shape();
            (s[0], s[1], s[2], s[3])
        };
        let n = h * w;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut dx = Images::<F>::zeros(cache.xhat.raw_dim());
        let xh = cache.xhat.as_slice().unwrap();
        let dys = dy.as_slice().expect("contiguous grad");
        let dxs = dx.as_slice_mut().unwrap();
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        let mut dxh = vec![F::zero(); n];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * n;
                let xh_p = &xh[base..base + n];
                let dy_p = &dys[base..base + n];
                if wrt_params {
                    for (&d, &x) in dy_p.iter().zip(xh_p.iter()) {
                        dgamma[ci] += d * x;
                        dbeta[ci] += d;
                    }
                }
                let g = gamma[ci];
                for (o, &d) in dxh.iter_mut().zip(dy_p.iter()) {
                    *o = d * g;
                }
                norm_group_backward(
                    xh_p,
                    &dxh,
                    cache.invstd[bi * c + ci],
                    &mut dxs[base..base + n],
                );
            }
        }
        if wrt_params {
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for ci in 0..c {
                gg[ci] += dgamma[ci];
                bg[ci] += dbeta[ci];
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

pub struct BatchNormCache<F: Real> {
    xhat: Images<F>,
    invstd: Vec<F>, // per channel; batch stats in train mode, running in eval
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: ArrayD<F>,
    pub running_var: ArrayD<F>,
    pub channels: usize,
    name: String,
}

impl<F: Real> BatchNorm2d<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            running_mean: ArrayD::zeros(ndarray::IxDyn(&[channels])),
            running_var: ArrayD::from_elem(ndarray::IxDyn(&[channels]), F::one()),
            channels,
            name: name.to_string(),
        }
    }

    pub fn forward(&mut self, x: Images<F>, mode: Mode) -> (Images<F>, BatchNormCache<F>) {
        let (b, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        assert_eq!(c, self.channels);
        let plane = h * w;
        let n = b * plane;
        let eps = rf::<F>(EPS);
        let mut xhat = x;
        let mut invstd = Vec::with_capacity(c);
        {
            let data = xhat.as_slice_mut().expect("contiguous");
            match mode {
                Mode::Train => {
                    let nf = rf::<F>(n as f64);
                    let momentum = rf::<F>(BN_MOMENTUM);
                    for ci in 0..c {
                        let mut mean = F::zero();
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for &v in &data[base..base + plane] {
                                mean += v;
                            }
                        }
                        mean /= nf;
                        let mut var = F::zero();
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for &v in &data[base..base + plane] {
                                let d = v - mean;
                                var += d * d;
                            }
                        }
                        var /= nf;
                        let is = (var + eps).sqrt().recip();
                        invstd.push(is);
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for v in data[base..base + plane].iter_mut() {
                                *v = (*v - mean) * is;
                            }
                        }
                        // Running stats use the unbiased variance estimate.
                        let unbiased = if n > 1 {
                            var * nf / rf::<F>((n - 1) as f64)
                        } else {
                            var
                        };
                        let rm = &mut self.running_mean[ci];
                        *rm = (F::one() - momentum) * *rm + momentum * mean;
                        let rv = &mut self.running_var[ci];
                        *rv = (F::one() - momentum) * *rv + momentum * unbiased;
                    }
                }
                Mode::Eval => {
                    for ci in 0..c {
                        let mean = self.running_mean[ci];
                        let is = (self.running_var[ci] + eps).sqrt().recip();
                        invstd.push(is);
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for v in data[base..base + plane].iter_mut() {
                                *v = (*v - mean) * is;
                            }
                        }
                    }
                }
            }
        }
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = xhat.clone();
        {
            let data = y.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let (g, be) = (gamma[ci], beta[ci]);
                    for v in data[(bi * c + ci) * plane..(bi * c + ci + 1) * plane].iter_mut() {
                        *v = g * *v + be;
                    }
                }
            }
        }
        (y, BatchNormCache { xhat, invstd, mode })
    }

    pub fn backward(
        &mut self,
        cache: BatchNormCache<F>,
        dy: &Images<F>,
        wrt_params: bool,
    ) -> Images<F> {
        let (b, c, h, w) = {
            let s = cache.xhat.shape();
            (s[0], s[1], s[2], s[3])
        };
        let plane = h * w;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let dys = dy.as_slice().expect("contiguous grad");
        let mut dx = Images::<F>::zeros(cache.xhat.raw_dim());

        if wrt_params {
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let mut dg = F::zero();
                    let mut db = F::zero();
                    for (&d, &x) in dys[base..base + plane].iter().zip(&xh[base..base + plane]) {
                        dg += d * x;
                        db += d;
                    }
                    gg[ci] += dg;
                    bg[ci] += db;
                }
            }
        }

        let dxs = dx.as_slice_mut().unwrap();
        match cache.mode {
            Mode::Eval => {
                // Fixed affine map: dx = dy * gamma * invstd.
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let scale = gamma[ci] * cache.invstd[ci];
                        for (o, &d) in dxs[base..base + plane]
                            .iter_mut()
                            .zip(&dys[base..base + plane])
                        {
                            *o = d * scale;
                        }
                    }
                }
            }
            Mode::Train => {
                // Group = one channel across the whole batch.
                let mut xh_g = vec![F::zero(); b * plane];
                let mut dxh_g = vec![F::zero(); b * plane];
                let mut dx_g = vec![F::zero(); b * plane];
                for ci in 0..c {
                    let g = gamma[ci];
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        let off = bi * plane;
                        xh_g[off..off + plane].copy_from_slice(&xh[base..base + plane]);
                        for (o, &d) in dxh_g[off..off + plane]
                            .iter_mut()
                            .zip(&dys[base..base + plane])
                        {
                            *o = d * g;
                        }
                    }
                    norm_group_backward(&xh_g, &dxh_g, cache.invstd[ci], &mut dx_g);
                    for bi in 0..b {
                        let base = (bi * c + ci) * plane;
                        let off = bi * plane;
                        dxs[base..base + plane].copy_from_slice(&dx_g[off..off + plane]);
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        f(&mean_name, &mut self.running_mean);
        f(&var_name, &mut self.running_var);
    }
}
