use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{LayoutBuilder, ParamRange};
use super::Feature;

/// 3x3 convolution with reflect-101 padding of 1, implemented as
/// im2col plus a matrix multiply. Supports stride 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
}

const K: usize = 3;
const PAD: usize = 1;

/// Forward cache: the im2col matrix and the input spatial shape.
pub struct ConvCache {
    pub cols: Array2<f64>,
    pub in_dim: (usize, usize, usize),
    pub out_dim: (usize, usize, usize),
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

impl Conv2d {
    pub fn new(builder: &mut LayoutBuilder, cin: usize, cout: usize, stride: usize) -> Self {
        assert!(stride == 1 || stride == 2);
        Conv2d {
            cin,
            cout,
            stride,
            weight: builder.alloc(cout * cin * K * K),
            bias: builder.alloc(cout),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len + self.bias.len
    }

    /// Kaiming-style init scaled by `gain`; bias zero.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R, gain: f64) {
        let std = gain * (2.0 / (self.cin * K * K) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in self.weight.slice_mut(params) {
            *v = dist.sample(rng);
        }
        for v in self.bias.slice_mut(params) {
            *v = 0.0;
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * PAD - K) / self.stride + 1,
            (w + 2 * PAD - K) / self.stride + 1,
        )
    }

    pub fn forward(&self, params: &[f64], x: &Feature) -> (Feature, ConvCache) {
        let (cin, h, w) = x.dim();
        debug_assert_eq!(cin, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let s = self.stride;

        let mut cols = Array2::<f64>::zeros((self.cin * K * K, ho * wo));
        for c in 0..cin {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (c * K + ky) * K + kx;
                    let mut cols_row = cols.row_mut(row);
                    for oy in 0..ho {
                        let iy = mirror((oy * s + ky) as isize - PAD as isize, h);
                        for ox in 0..wo {
                            let ix = mirror((ox * s + kx) as isize - PAD as isize, w);
                            cols_row[oy * wo + ox] = x[[c, iy, ix]];
                        }
                    }
                }
            }
        }

        let wmat = ArrayView2::from_shape((self.cout, self.cin * K * K), self.weight.slice(params))
            .expect("weight range matches shape");
        let mut y = wmat.dot(&cols); // (cout, ho*wo)
        let bias = self.bias.slice(params);
        for (mut row, b) in y.rows_mut().into_iter().zip(bias) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y.into_shape_with_order((self.cout, ho, wo)).expect("reshape");
        (
            y,
            ConvCache { cols, in_dim: (cin, h, w), out_dim: (self.cout, ho, wo) },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ConvCache,
        gy: &Feature,
        grads: &mut [f64],
    ) -> Feature {
        let (cin, h, w) = cache.in_dim;
        let (cout, ho, wo) = cache.out_dim;
        let s = self.stride;
        let gy_mat = ArrayView2::from_shape((cout, ho * wo), gy.as_slice().expect("contiguous"))
            .expect("shape");

        // Parameter gradients.
        let gw = gy_mat.dot(&cache.cols.t()); // (cout, cin*9)
        for (dst, src) in self.weight.slice_mut(grads).iter_mut().zip(gw.iter()) {
            *dst += src;
        }
        for (dst, row) in self.bias.slice_mut(grads).iter_mut().zip(gy_mat.rows()) {
            *dst += row.sum();
        }

        // Input gradient via col2im with the padding adjoint folded in.
        let wmat = ArrayView2::from_shape((cout, cin * K * K), self.weight.slice(params))
            .expect("shape");
        let gcols = wmat.t().dot(&gy_mat); // (cin*9, ho*wo)
        let mut gx = Array3::<f64>::zeros((cin, h, w));
        for c in 0..cin {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (c * K + ky) * K + kx;
                    let grow = gcols.row(row);
                    for oy in 0..ho {
                        let iy = mirror((oy * s + ky) as isize - PAD as isize, h);
                        for ox in 0..wo {
                            let ix = mirror((ox * s + kx) as isize - PAD as isize, w);
                            gx[[c, iy, ix]] += grow[oy * wo + ox];
                        }
                    }
                }
            }
        }
        gx
    }
}
