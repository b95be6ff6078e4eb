use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

fn default_grid() -> usize {
    8
}

/// Fixed-pattern noise: per-column stripe offsets (readout FPN) plus a
/// low-frequency optical bias field bilinearly upsampled from a coarse
/// Gaussian grid. Both fields are fully determined by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPatternParams {
    pub sigma_stripe: f64,
    pub sigma_optical: f64,
    #[serde(default = "default_grid")]
    pub optical_grid: usize,
    /// When set, the optical field scales the signal instead of adding
    /// to it: `img * (1 + field)` rather than `img + field`.
    #[serde(default)]
    pub multiplicative_optical: bool,
    pub seed: u64,
}

impl FixedPatternParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_stripe < 0.0 || self.sigma_optical < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "fpn sigmas must be non-negative, got stripe={} optical={}",
                self.sigma_stripe, self.sigma_optical
            )));
        }
        if self.optical_grid == 0 {
            return Err(Error::InvalidParameter("optical_grid must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws the stripe offsets and the upsampled optical field for an
/// `h`x`w` raster. Exposed so tests can check the fields directly.
pub fn fpn_fields(p: &FixedPatternParams, h: usize, w: usize) -> (Vec<f64>, Array2<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(p.seed);
    let stripe: Vec<f64> = if p.sigma_stripe > 0.0 {
        let dist = Normal::new(0.0, p.sigma_stripe).expect("validated sigma");
        (0..w).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![0.0; w]
    };

    let g = p.optical_grid;
    let optical = if p.sigma_optical > 0.0 {
        let dist = Normal::new(0.0, p.sigma_optical).expect("validated sigma");
        let nodes = Array2::from_shape_fn((g + 1, g + 1), |_| dist.sample(&mut rng));
        Array2::from_shape_fn((h, w), |(i, j)| {
            let fy = if h > 1 { i as f64 * g as f64 / (h - 1) as f64 } else { 0.0 };
            let fx = if w > 1 { j as f64 * g as f64 / (w - 1) as f64 } else { 0.0 };
            let (y0, x0) = ((fy.floor() as usize).min(g - 1), (fx.floor() as usize).min(g - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            nodes[[y0, x0]] * (1.0 - ty) * (1.0 - tx)
                + nodes[[y0, x0 + 1]] * (1.0 - ty) * tx
                + nodes[[y0 + 1, x0]] * ty * (1.0 - tx)
                + nodes[[y0 + 1, x0 + 1]] * ty * tx
        })
    } else {
        Array2::zeros((h, w))
    };
    (stripe, optical)
}

/// `out = clamp(img + stripe + optical, 0, 1)` (or the multiplicative
/// optical variant when configured).
pub fn apply_fixed_pattern_noise(img: &Image, p: &FixedPatternParams) -> Result<Image> {
    p.validate()?;
    if p.sigma_stripe == 0.0 && p.sigma_optical == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.pixels().dim();
    let (stripe, optical) = fpn_fields(p, h, w);
    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        let x = img.pixels()[[i, j]];
        if p.multiplicative_optical {
            x * (1.0 + optical[[i, j]]) + stripe[j]
        } else {
            x + optical[[i, j]] + stripe[j]
        }
    });
    Ok(Image::from_clamped(out, img.source_depth()))
}
