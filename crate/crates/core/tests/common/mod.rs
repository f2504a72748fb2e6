//! Shared finite-difference harness for gradient verification.
//!
//! The checks here are intentionally independent of the library's backward
//! passes: they only call forward paths and compare against central
//! differences at f64.

#![allow(dead_code)]

use transcycle::nn::{Parameters, Real};

pub fn total_param_count<F: Real>(net: &mut impl Parameters<F>) -> usize {
    let mut n = 0;
    net.visit_params(&mut |p| n += p.numel());
    n
}

pub fn perturb_param<F: Real>(net: &mut impl Parameters<F>, flat: usize, delta: F) {
    let mut off = 0;
    net.visit_params(&mut |p| {
        let n = p.numel();
        if flat >= off && flat < off + n {
            let s = p.value.as_slice_mut().expect("standard layout");
            s[flat - off] += delta;
        }
        off += n;
    });
}

pub fn grad_at<F: Real>(net: &mut impl Parameters<F>, flat: usize) -> F {
    let mut off = 0;
    let mut out = F::zero();
    net.visit_params(&mut |p| {
        let n = p.numel();
        if flat >= off && flat < off + n {
            out = p.grad.as_slice().expect("standard layout")[flat - off];
        }
        off += n;
    });
    out
}

/// Relative error with a small absolute floor, the usual grad-check metric.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference check of `samples` evenly spread parameters.
///
/// `loss_only` must evaluate the identical forward path that produced the
/// analytic gradients. Returns the worst relative error observed.
pub fn check_param_gradients<N: Parameters<f64>>(
    net: &mut N,
    mut loss_only: impl FnMut(&mut N) -> f64,
    samples: usize,
    h: f64,
    tol: f64,
) -> f64 {
    let total = total_param_count(net);
    assert!(total > 0);
    let step = (total / samples.min(total)).max(1);
    let mut worst = 0.0f64;
    let mut idx = 0;
    while idx < total {
        let analytic = grad_at(net, idx);
        perturb_param(net, idx, h);
        let plus = loss_only(net);
        perturb_param(net, idx, -2.0 * h);
        let minus = loss_only(net);
        perturb_param(net, idx, h);
        let fd = (plus - minus) / (2.0 * h);
        let err = rel_err(analytic, fd);
        assert!(
            err < tol,
            "param {idx}: analytic {analytic:.9e} vs fd {fd:.9e} (rel err {err:.3e})"
        );
        worst = worst.max(err);
        idx += step;
    }
    worst
}

/// Deterministic pseudo-random filler in [-0.9, 0.9] for test tensors.
pub fn fill_det(seed: u64, buf: &mut [f64]) {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    for v in buf.iter_mut() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        *v = ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * 0.9;
    }
}
