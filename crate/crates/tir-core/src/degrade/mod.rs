//! The composed TIR degradation model.
//!
//! A degraded observation is produced by chaining up to three gated
//! steps in a fixed addition order: low contrast, then blur, then noise
//! (fixed-pattern noise plus additive random noise applied together).
//! Each step is deterministic given its parameters and seed, so a
//! [`DegradationSpec`] fully reproduces its output.

mod blur;
mod contrast;
mod fpn;
mod noise;
mod sample;

pub use blur::{apply_blur, materialize_kernel, BlurParams};
pub use contrast::{apply_low_contrast, ContrastParams};
pub use fpn::{apply_fixed_pattern_noise, fpn_fields, FixedPatternParams};
pub use noise::{apply_random_noise, RandomNoiseParams};
pub use sample::{sample_spec, sample_spec_with_gates, RangeTable, Tier, TierRanges};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// One removable degradation step, in the canonical addition order
/// contrast -> blur -> noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Contrast,
    Blur,
    Noise,
}

impl StepKind {
    pub const CANONICAL_ADDITION_ORDER: [StepKind; 3] =
        [StepKind::Contrast, StepKind::Blur, StepKind::Noise];
}

/// Whether a degraded sample carries one isolated degradation per image
/// or a sequentially composed chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Single,
    Composite,
}

/// Gate states for the three degradation steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gates {
    pub contrast: bool,
    pub blur: bool,
    pub noise: bool,
}

impl Gates {
    pub fn active_count(&self) -> usize {
        self.contrast as usize + self.blur as usize + self.noise as usize
    }

    pub fn is_active(&self, kind: StepKind) -> bool {
        match kind {
            StepKind::Contrast => self.contrast,
            StepKind::Blur => self.blur,
            StepKind::Noise => self.noise,
        }
    }
}

/// A fully parameterized, reproducible instance of the degradation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub contrast: Option<ContrastParams>,
    pub blur: Option<BlurParams>,
    pub fpn: Option<FixedPatternParams>,
    pub random_noise: Option<RandomNoiseParams>,
    pub gates: Gates,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gates.active_count() == 0 {
            return Err(Error::InvalidParameter(
                "degradation spec needs at least one active gate".into(),
            ));
        }
        if self.gates.contrast != self.contrast.is_some() {
            return Err(Error::InvalidParameter(
                "contrast gate must match presence of contrast params".into(),
            ));
        }
        if self.gates.blur != self.blur.is_some() {
            return Err(Error::InvalidParameter(
                "blur gate must match presence of blur params".into(),
            ));
        }
        if self.gates.noise != (self.fpn.is_some() && self.random_noise.is_some()) {
            return Err(Error::InvalidParameter(
                "noise gate must match presence of fpn and random-noise params".into(),
            ));
        }
        if let Some(c) = &self.contrast {
            c.validate()?;
        }
        if let Some(b) = &self.blur {
            b.validate()?;
        }
        if let Some(f) = &self.fpn {
            f.validate()?;
        }
        if let Some(n) = &self.random_noise {
            n.validate()?;
        }
        Ok(())
    }

    /// Active step kinds in the canonical addition order.
    pub fn step_kinds(&self) -> Vec<StepKind> {
        StepKind::CANONICAL_ADDITION_ORDER
            .into_iter()
            .filter(|k| self.gates.is_active(*k))
            .collect()
    }

    /// Applies one step of this spec to an image.
    ///
    /// The noise step applies the fixed-pattern field and the additive
    /// random noise together, collapsing the two noise terms into one
    /// removable step.
    pub fn apply_step(&self, img: &Image, kind: StepKind) -> Result<Image> {
        match kind {
            StepKind::Contrast => {
                let p = self.contrast.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("contrast step not active in spec".into())
                })?;
                apply_low_contrast(img, p)
            }
            StepKind::Blur => {
                let p = self
                    .blur
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("blur step not active in spec".into()))?;
                apply_blur(img, p)
            }
            StepKind::Noise => {
                let f = self.fpn.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("noise step not active in spec".into())
                })?;
                let r = self.random_noise.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("noise step not active in spec".into())
                })?;
                let with_fpn = apply_fixed_pattern_noise(img, f)?;
                apply_random_noise(&with_fpn, r)
            }
        }
    }
}

/// Applies all active operators in the order contrast -> blur -> FPN ->
/// random noise, skipping inactive gates.
pub fn compose_eq1(img: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let mut out = img.clone();
    for kind in spec.step_kinds() {
        out = spec.apply_step(&out, kind)?;
    }
    Ok(out)
}

/// An ordered chain of degraded images for one clean source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub scenario: Scenario,
    pub clean: Image,
    /// `degraded[k-1]` is the k-th degraded image, 1-based as indexed by
    /// the training loop.
    pub degraded: Vec<Image>,
    pub step_kinds: Vec<StepKind>,
    pub spec: DegradationSpec,
}

impl TrainingSequence {
    pub fn steps(&self) -> usize {
        self.degraded.len()
    }
}

/// Builds the degraded sequence for one clean image.
///
/// Composite chains each step onto the previous degraded image; single
/// applies each active step to the clean image independently.
pub fn generate_sequence(
    clean: &Image,
    spec: &DegradationSpec,
    scenario: Scenario,
) -> Result<TrainingSequence> {
    spec.validate()?;
    let step_kinds = spec.step_kinds();
    let mut degraded = Vec::with_capacity(step_kinds.len());
    let mut prev = clean.clone();
    for &kind in &step_kinds {
        let source = match scenario {
            Scenario::Single => clean,
            Scenario::Composite => &prev,
        };
        let next = spec.apply_step(source, kind)?;
        prev = next.clone();
        degraded.push(next);
    }
    Ok(TrainingSequence {
        scenario,
        clean: clean.clone(),
        degraded,
        step_kinds,
        spec: spec.clone(),
    })
}
