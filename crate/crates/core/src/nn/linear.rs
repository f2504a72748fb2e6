//! Fully-connected layer on (B, features) matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Ix1, Ix2};

use super::{Param, Real};

pub struct LinearCache<F: Real> {
    input: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Param<F>, // (in_features, out_features)
    pub bias: Param<F>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<F: Real> Linear<F> {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[in_features, out_features])),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_features])),
            ),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: Array2<F>) -> (Array2<F>, LinearCache<F>) {
        assert_eq!(x.shape()[1], self.in_features);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = Array2::<F>::zeros((x.shape()[0], self.out_features));
        general_mat_mul(F::one(), &x.view(), &w, F::zero(), &mut y.view_mut());
        for mut row in y.rows_mut() {
            row += &b;
        }
        (y, LinearCache { input: x })
    }

    pub fn backward(
        &mut self,
        cache: LinearCache<F>,
        dy: &Array2<F>,
        wrt_params: bool,
    ) -> Array2<F> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut dx = Array2::<F>::zeros(cache.input.raw_dim());
        general_mat_mul(F::one(), &dy.view(), &w.t(), F::zero(), &mut dx.view_mut());
        if wrt_params {
            let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(F::one(), &cache.input.t(), &dy.view(), F::one(), &mut wg);
            let mut bg = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for row in dy.rows() {
                bg += &row;
            }
        }
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
