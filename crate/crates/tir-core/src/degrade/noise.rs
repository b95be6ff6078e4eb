use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Additive i.i.d. Gaussian noise, seeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomNoiseParams {
    pub sigma_r: f64,
    pub seed: u64,
}

impl RandomNoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_r < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_r must be non-negative, got {}",
                self.sigma_r
            )));
        }
        Ok(())
    }
}

pub fn apply_random_noise(img: &Image, p: &RandomNoiseParams) -> Result<Image> {
    p.validate()?;
    if p.sigma_r == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(p.seed);
    let dist = Normal::new(0.0, p.sigma_r).expect("validated sigma");
    let mut out = img.pixels().clone();
    // Row-major draw order keeps the field reproducible.
    for v in out.iter_mut() {
        *v += dist.sample(&mut rng);
    }
    Ok(Image::from_clamped(out, img.source_depth()))
}
