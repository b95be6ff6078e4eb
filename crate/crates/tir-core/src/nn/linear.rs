use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{LayoutBuilder, ParamRange};

/// Dense affine map `y = W x + b` over flat vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
}

impl Linear {
    pub fn new(builder: &mut LayoutBuilder, din: usize, dout: usize) -> Self {
        Linear {
            din,
            dout,
            weight: builder.alloc(dout * din),
            bias: builder.alloc(dout),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len + self.bias.len
    }

    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R, std: f64) {
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in self.weight.slice_mut(params) {
            *v = dist.sample(rng);
        }
        for v in self.bias.slice_mut(params) {
            *v = 0.0;
        }
    }

    pub fn zero_init(&self, params: &mut [f64]) {
        for v in self.weight.slice_mut(params) {
            *v = 0.0;
        }
        for v in self.bias.slice_mut(params) {
            *v = 0.0;
        }
    }

    pub fn forward(&self, params: &[f64], x: &Array1<f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.din);
        let w = ArrayView2::from_shape((self.dout, self.din), self.weight.slice(params))
            .expect("weight shape");
        let b = ArrayView1::from(self.bias.slice(params));
        w.dot(x) + b
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Array1<f64>,
        gy: &Array1<f64>,
        grads: &mut [f64],
    ) -> Array1<f64> {
        let gw = self.weight.slice_mut(grads);
        for i in 0..self.dout {
            let g = gy[i];
            for j in 0..self.din {
                gw[i * self.din + j] += g * x[j];
            }
        }
        for (dst, g) in self.bias.slice_mut(grads).iter_mut().zip(gy) {
            *dst += g;
        }
        let w = ArrayView2::from_shape((self.dout, self.din), self.weight.slice(params))
            .expect("weight shape");
        w.t().dot(gy)
    }
}
