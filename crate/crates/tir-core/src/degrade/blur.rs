use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Blur kernel family covering atmospheric (gaussian), out-of-focus
/// (defocus disk), and motion blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BlurParams {
    Gaussian { sigma: f64 },
    Defocus { radius: f64 },
    Motion { length: f64, angle_deg: f64 },
    /// Unit 1x1 kernel; the identity parameters of the blur operator.
    Identity,
}

impl BlurParams {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BlurParams::Gaussian { sigma } if sigma <= 0.0 => Err(Error::InvalidParameter(
                format!("gaussian sigma must be positive, got {sigma}"),
            )),
            BlurParams::Defocus { radius } if radius <= 0.0 => Err(Error::InvalidParameter(
                format!("defocus radius must be positive, got {radius}"),
            )),
            BlurParams::Motion { length, .. } if length < 1.0 => Err(Error::InvalidParameter(
                format!("motion length must be >= 1, got {length}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Materializes the kernel: odd side, non-negative, sums to 1.
pub fn materialize_kernel(p: &BlurParams) -> Result<Array2<f64>> {
    p.validate()?;
    let mut k = match *p {
        BlurParams::Identity => Array2::from_elem((1, 1), 1.0),
        BlurParams::Gaussian { sigma } => {
            let r = (3.0 * sigma).ceil().max(1.0) as usize;
            let side = 2 * r + 1;
            Array2::from_shape_fn((side, side), |(i, j)| {
                let dy = i as f64 - r as f64;
                let dx = j as f64 - r as f64;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
        }
        BlurParams::Defocus { radius } => {
            let r = radius.ceil() as usize;
            let side = 2 * r + 1;
            // Soft-edged disk: per-tap weight approximates pixel coverage.
            Array2::from_shape_fn((side, side), |(i, j)| {
                let dy = i as f64 - r as f64;
                let dx = j as f64 - r as f64;
                (radius + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0)
            })
        }
        BlurParams::Motion { length, angle_deg } => {
            let half = (length - 1.0) / 2.0;
            let r = half.ceil().max(0.0) as usize;
            let side = 2 * r + 1;
            let mut k = Array2::zeros((side, side));
            let theta = angle_deg.to_radians();
            let (dy, dx) = (theta.sin(), theta.cos());
            let taps = (length.round() as usize).max(1);
            for t in 0..taps {
                let s = if taps == 1 {
                    0.0
                } else {
                    -half + t as f64 * (length - 1.0) / (taps - 1) as f64
                };
                // Bilinear splat of the tap onto the grid.
                let y = r as f64 + s * dy;
                let x = r as f64 + s * dx;
                let (y0, x0) = (y.floor(), x.floor());
                let (fy, fx) = (y - y0, x - x0);
                for (oy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                    for (ox, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                        let yi = y0 as isize + oy as isize;
                        let xi = x0 as isize + ox as isize;
                        if (0..side as isize).contains(&yi) && (0..side as isize).contains(&xi) {
                            k[[yi as usize, xi as usize]] += wy * wx;
                        }
                    }
                }
            }
            k
        }
    };
    let sum: f64 = k.sum();
    if sum <= 0.0 {
        return Err(Error::InvalidParameter("blur kernel sums to zero".into()));
    }
    k.mapv_inplace(|v| v / sum);
    Ok(k)
}

/// Index mirroring without edge repetition (reflect-101).
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
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

/// 2-D correlation with the materialized kernel, reflective boundaries.
pub fn apply_blur(img: &Image, p: &BlurParams) -> Result<Image> {
    let kernel = materialize_kernel(p)?;
    convolve_reflect(img, &kernel)
}

pub(crate) fn convolve_reflect(img: &Image, kernel: &Array2<f64>) -> Result<Image> {
    let (kh, kw) = kernel.dim();
    let (h, w) = img.pixels().dim();
    if kh > h || kw > w {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kh}x{kw} larger than image {h}x{w}"
        )));
    }
    let (ry, rx) = (kh as isize / 2, kw as isize / 2);
    let x = img.pixels();
    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for ki in 0..kh {
            let yi = mirror(i as isize + ki as isize - ry, h);
            for kj in 0..kw {
                let xi = mirror(j as isize + kj as isize - rx, w);
                acc += kernel[[ki, kj]] * x[[yi, xi]];
            }
        }
        acc
    });
    Ok(Image::from_clamped(out, img.source_depth()))
}
