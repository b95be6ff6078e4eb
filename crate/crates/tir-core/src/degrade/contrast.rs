use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Mean-anchored affine contrast compression with an additive offset:
/// `out = clamp(mu + alpha * (x - mu) + delta, 0, 1)` where `mu` is the
/// image mean. `alpha = 1, delta = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastParams {
    pub alpha: f64,
    pub delta: f64,
}

impl ContrastParams {
    pub const IDENTITY: ContrastParams = ContrastParams { alpha: 1.0, delta: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "contrast alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(-0.1..=0.1).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "contrast delta must be in [-0.1, 0.1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

pub fn apply_low_contrast(img: &Image, p: &ContrastParams) -> Result<Image> {
    p.validate()?;
    if *p == ContrastParams::IDENTITY {
        return Ok(img.clone());
    }
    let mu = img.pixels().mean().expect("non-empty image");
    let out = img.pixels().mapv(|x| mu + p.alpha * (x - mu) + p.delta);
    Ok(Image::from_clamped(out, img.source_depth()))
}
