//! Pointwise activations.

use super::{rf, Images, Real};

pub struct ReluCache<F: Real> {
    input: Images<F>,
}

#[derive(Debug, Clone, Default)]
pub struct Relu;

impl Relu {
    pub fn forward<F: Real>(&self, x: Images<F>) -> (Images<F>, ReluCache<F>) {
        let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
        (y, ReluCache { input: x })
    }

    pub fn backward<F: Real>(&self, cache: ReluCache<F>, dy: &Images<F>) -> Images<F> {
        let mut dx = cache.input;
        dx.zip_mut_with(dy, |x, &d| {
            *x = if *x > F::zero() { d } else { F::zero() };
        });
        dx
    }
}

pub struct LeakyReluCache<F: Real> {
    input: Images<F>,
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        LeakyRelu { slope }
    }

    pub fn forward<F: Real>(&self, x: Images<F>) -> (Images<F>, LeakyReluCache<F>) {
        let a = rf::<F>(self.slope);
        let y = x.mapv(|v| if v > F::zero() { v } else { v * a });
        (y, LeakyReluCache { input: x })
    }

    pub fn backward<F: Real>(&self, cache: LeakyReluCache<F>, dy: &Images<F>) -> Images<F> {
        let a = rf::<F>(self.slope);
        let mut dx = cache.input;
        dx.zip_mut_with(dy, |x, &d| {
            *x = if *x > F::zero() { d } else { d * a };
        });
        dx
    }
}

pub struct TanhCache<F: Real> {
    output: Images<F>,
}

/// Saturating odd output activation; keeps generator output in [-1, 1].
#[derive(Debug, Clone, Default)]
pub struct Tanh;

impl Tanh {
    pub fn forward<F: Real>(&self, x: Images<F>) -> (Images<F>, TanhCache<F>) {
        let y = x.mapv(|v| v.tanh());
        let cache = TanhCache { output: y.clone() };
        (y, cache)
    }

    pub fn backward<F: Real>(&self, cache: TanhCache<F>, dy: &Images<F>) -> Images<F> {
        let mut dx = cache.output;
        dx.zip_mut_with(dy, |y, &d| {
            *y = d * (F::one() - *y * *y);
        });
        dx
    }
}
