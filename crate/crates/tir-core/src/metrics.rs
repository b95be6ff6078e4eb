//! Reference-based image quality metrics on the [0, 1] representation.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::Image;

/// Cap reported for a zero-MSE (identical) pair; keeps reports finite
/// and sortable.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB with unit data range, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "psnr inputs {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let n = (a.height() * a.width()) as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let t = (i as isize - r) as f64;
        *v = (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-region separable Gaussian filter: output (h-10, w-10).
fn valid_gauss(x: &Array2<f64>) -> Array2<f64> {
    let w = gaussian_taps();
    let (h, wid) = x.dim();
    let mut rows = Array2::zeros((h, wid - SSIM_WINDOW + 1));
    for i in 0..h {
        for j in 0..wid - SSIM_WINDOW + 1 {
            let mut s = 0.0;
            for (t, wt) in w.iter().enumerate() {
                s += wt * x[[i, j + t]];
            }
            rows[[i, j]] = s;
        }
    }
    let mut out = Array2::zeros((h - SSIM_WINDOW + 1, wid - SSIM_WINDOW + 1));
    for i in 0..h - SSIM_WINDOW + 1 {
        for j in 0..wid - SSIM_WINDOW + 1 {
            let mut s = 0.0;
            for (t, wt) in w.iter().enumerate() {
                s += wt * rows[[i + t, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Mean local SSIM over the valid region, 11x11 Gaussian window with
/// sigma 1.5 and the standard stabilizers C1 = 0.01^2, C2 = 0.03^2.
/// Local variances use the population (weighted) normalization.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "ssim inputs {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim needs both dimensions >= {SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    if a.pixels() == b.pixels() {
        // Self-similarity is exact by definition; skips rounding in the
        // window statistics.
        return Ok(1.0);
    }

    let x = a.pixels();
    let y = b.pixels();
    let ux = valid_gauss(x);
    let uy = valid_gauss(y);
    let uxx = valid_gauss(&(x * x));
    let uyy = valid_gauss(&(y * y));
    let uxy = valid_gauss(&(x * y));

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ((i, j), &mx) in ux.indexed_iter() {
        let my = uy[[i, j]];
        let vx = uxx[[i, j]] - mx * mx;
        let vy = uyy[[i, j]] - my * my;
        let vxy = uxy[[i, j]] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / ux.len() as f64)
}
