use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    BlurParams, ContrastParams, DegradationSpec, FixedPatternParams, Gates, RandomNoiseParams,
};

/// Degradation severity tier for corpus synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Normal,
    Hard,
}

/// Uniform sampling ranges for one severity tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierRanges {
    pub alpha: (f64, f64),
    pub delta: (f64, f64),
    pub gaussian_sigma: (f64, f64),
    pub defocus_radius: (f64, f64),
    pub motion_length: (f64, f64),
    pub sigma_stripe: (f64, f64),
    pub sigma_optical: (f64, f64),
    pub sigma_r: (f64, f64),
}

impl TierRanges {
    pub fn normal_default() -> Self {
        TierRanges {
            alpha: (0.55, 0.8),
            delta: (-0.05, 0.05),
            gaussian_sigma: (0.8, 1.8),
            defocus_radius: (1.0, 3.0),
            motion_length: (3.0, 7.0),
            sigma_stripe: (0.01, 0.03),
            sigma_optical: (0.01, 0.02),
            sigma_r: (0.005, 0.015),
        }
    }

    pub fn hard_default() -> Self {
        TierRanges {
            alpha: (0.3, 0.55),
            delta: (-0.1, 0.1),
            gaussian_sigma: (1.8, 3.0),
            defocus_radius: (3.0, 5.0),
            motion_length: (7.0, 15.0),
            sigma_stripe: (0.03, 0.05),
            sigma_optical: (0.02, 0.04),
            sigma_r: (0.015, 0.03),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("gaussian_sigma", self.gaussian_sigma),
            ("defocus_radius", self.defocus_radius),
            ("motion_length", self.motion_length),
            ("sigma_stripe", self.sigma_stripe),
            ("sigma_optical", self.sigma_optical),
            ("sigma_r", self.sigma_r),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "bad range for {name}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

fn default_gate_prob() -> f64 {
    0.8
}

fn default_grid() -> usize {
    8
}

/// Parameter range table driving gated degradation sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeTable {
    pub normal: TierRanges,
    pub hard: TierRanges,
    #[serde(default = "default_gate_prob")]
    pub gate_prob: f64,
    #[serde(default = "default_grid")]
    pub optical_grid: usize,
    #[serde(default)]
    pub multiplicative_optical: bool,
}

impl Default for RangeTable {
    fn default() -> Self {
        RangeTable {
            normal: TierRanges::normal_default(),
            hard: TierRanges::hard_default(),
            gate_prob: default_gate_prob(),
            optical_grid: default_grid(),
            multiplicative_optical: false,
        }
    }
}

impl RangeTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_prob > 0.0 && self.gate_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gate_prob must be in (0, 1], got {}",
                self.gate_prob
            )));
        }
        if self.optical_grid == 0 {
            return Err(Error::InvalidConfig("optical_grid must be >= 1".into()));
        }
        self.normal.validate()?;
        self.hard.validate()
    }

    pub fn tier(&self, tier: Tier) -> &TierRanges {
        match tier {
            Tier::Normal => &self.normal,
            Tier::Hard => &self.hard,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws a gated degradation spec: each gate Bernoulli(`gate_prob`),
/// redrawing when all three come up inactive, with parameters uniform
/// in the tier's ranges.
pub fn sample_spec<R: Rng>(table: &RangeTable, tier: Tier, rng: &mut R) -> Result<DegradationSpec> {
    table.validate()?;
    let gates = loop {
        let g = Gates {
            contrast: rng.gen_bool(table.gate_prob),
            blur: rng.gen_bool(table.gate_prob),
            noise: rng.gen_bool(table.gate_prob),
        };
        if g.active_count() > 0 {
            break g;
        }
    };
    sample_spec_with_gates(table, tier, gates, rng)
}

/// Draws a spec with the gate states fixed in advance; used by test
/// subset construction where the active steps are prescribed.
pub fn sample_spec_with_gates<R: Rng>(
    table: &RangeTable,
    tier: Tier,
    gates: Gates,
    rng: &mut R,
) -> Result<DegradationSpec> {
    table.validate()?;
    let ranges = table.tier(tier);

    let contrast = gates.contrast.then(|| ContrastParams {
        alpha: uniform(rng, ranges.alpha),
        delta: uniform(rng, ranges.delta),
    });

    let blur = gates.blur.then(|| match rng.gen_range(0..3u8) {
        0 => BlurParams::Gaussian { sigma: uniform(rng, ranges.gaussian_sigma) },
        1 => BlurParams::Defocus { radius: uniform(rng, ranges.defocus_radius) },
        _ => BlurParams::Motion {
            length: uniform(rng, ranges.motion_length),
            angle_deg: rng.gen_range(0.0..180.0),
        },
    });

    let (fpn, random_noise) = if gates.noise {
        (
            Some(FixedPatternParams {
                sigma_stripe: uniform(rng, ranges.sigma_stripe),
                sigma_optical: uniform(rng, ranges.sigma_optical),
                optical_grid: table.optical_grid,
                multiplicative_optical: table.multiplicative_optical,
                seed: rng.gen(),
            }),
            Some(RandomNoiseParams { sigma_r: uniform(rng, ranges.sigma_r), seed: rng.gen() }),
        )
    } else {
        (None, None)
    };

    let spec = DegradationSpec { contrast, blur, fpn, random_noise, gates, seed: rng.gen() };
    spec.validate()?;
    Ok(spec)
}
