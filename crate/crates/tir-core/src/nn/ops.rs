//! Pointwise activations and spatial resampling with their adjoints.

use ndarray::{Array1, Array3};

use super::Feature;

pub fn relu(x: &Feature) -> Feature {
    x.mapv(|v| v.max(0.0))
}

/// Adjoint of `relu` given the forward input.
pub fn relu_backward(x: &Feature, gy: &Feature) -> Feature {
    let mut g = gy.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu_scalar(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

fn gelu_grad_scalar(v: f64) -> f64 {
    let u = GELU_C * (v + 0.044715 * v * v * v);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
}

/// Gaussian-error linear unit (tanh form) over a vector.
pub fn gelu_vec(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(gelu_scalar)
}

pub fn gelu_vec_backward(x: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
    let mut g = x.mapv(gelu_grad_scalar);
    g *= gy;
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Feature) -> Feature {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, i, j)| x[[ci, i / 2, j / 2]])
}

/// Adjoint of `upsample2`: sums each 2x2 block.
pub fn upsample2_backward(gy: &Feature) -> Feature {
    let (c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                gx[[ci, i / 2, j / 2]] += gy[[ci, i, j]];
            }
        }
    }
    gx
}
