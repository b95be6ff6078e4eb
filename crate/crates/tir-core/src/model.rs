//! The conditioned restoration model: a backbone plus (optionally) the
//! prompt-conditioning stack sharing one flat parameter vector.
//!
//! The backbone's parameters occupy the front of the vector and the
//! prompt module's the back, so wrapping a backbone never disturbs its
//! existing weights, and with zero-initialized modulation heads the
//! wrapped forward pass reproduces the unwrapped one exactly.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    feature_to_image, pad_to_alignment, Backbone, BackboneCache, BackboneConfig, SiteModulation,
};
use crate::degrade::{Scenario, StepKind};
use crate::error::Result;
use crate::image::Image;
use crate::nn::{Feature, LayoutBuilder};
use crate::prompt::{PromptCache, PromptConfig, PromptModule};

/// Identifies the conditioning request of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSelection {
    pub deg: StepKind,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionedModel {
    pub backbone: Backbone,
    pub prompt: Option<PromptModule>,
    param_len: usize,
}

pub struct ModelCache {
    backbone: BackboneCache,
    prompt: Option<(PromptCache, Vec<SiteModulation>)>,
}

impl ConditionedModel {
    /// Builds a backbone and, when a prompt config is given, wraps it.
    /// Parameter initialization is deterministic in `seed`.
    pub fn build(
        bcfg: BackboneConfig,
        pcfg: Option<PromptConfig>,
        seed: u64,
    ) -> Result<(Self, Vec<f64>)> {
        let (backbone, params) = Backbone::build(bcfg, seed)?;
        match pcfg {
            Some(pcfg) => wrap_backbone(backbone, params, pcfg, seed ^ 0x70726f6d7074),
            None => {
                let param_len = params.len();
                Ok((ConditionedModel { backbone, prompt: None, param_len }, params))
            }
        }
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn is_wrapped(&self) -> bool {
        self.prompt.is_some()
    }

    /// Forward over an aligned feature. The prompt selection is ignored
    /// by an unwrapped backbone.
    pub fn forward_feature(
        &self,
        params: &[f64],
        x: &Feature,
        sel: PromptSelection,
    ) -> (Feature, ModelCache) {
        match &self.prompt {
            Some(pm) => {
                let (mods, pcache) = pm.forward(params, sel.deg, sel.scenario);
                let (out, bcache) = self.backbone.forward(params, x, Some(&mods));
                (out, ModelCache { backbone: bcache, prompt: Some((pcache, mods)) })
            }
            None => {
                let (out, bcache) = self.backbone.forward(params, x, None);
                (out, ModelCache { backbone: bcache, prompt: None })
            }
        }
    }

    /// Backward from an output gradient; accumulates into `grads` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ModelCache,
        g_out: &Feature,
        grads: &mut [f64],
    ) -> Feature {
        let mut site_grads = self.backbone.zero_site_grads();
        let mods = cache.prompt.as_ref().map(|(_, m)| m.as_slice());
        let g_in =
            self.backbone
                .backward(params, &cache.backbone, g_out, mods, &mut site_grads, grads);
        if let (Some(pm), Some((pcache, _))) = (&self.prompt, &cache.prompt) {
            pm.backward(params, pcache, &site_grads, grads);
        }
        g_in
    }

    /// Restores an image end to end: reflect-pad to the backbone
    /// alignment, forward, crop, clamp.
    pub fn forward_restore(&self, params: &[f64], img: &Image, sel: PromptSelection) -> Image {
        let (x, size) = pad_to_alignment(img, self.backbone.cfg.alignment());
        let (out, _) = self.forward_feature(params, &x, sel);
        feature_to_image(&out, size, img.source_depth())
    }
}

/// Wraps an existing backbone, appending freshly initialized prompt
/// parameters behind the backbone's.
pub fn wrap_backbone(
    backbone: Backbone,
    mut params: Vec<f64>,
    pcfg: PromptConfig,
    seed: u64,
) -> Result<(ConditionedModel, Vec<f64>)> {
    let mut builder = LayoutBuilder::new();
    builder.alloc(backbone.param_len()); // backbone occupies the front
    let prompt = PromptModule::new(&mut builder, pcfg, backbone.injection_sites())?;
    params.resize(builder.total(), 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    prompt.init(&mut params, &mut rng);
    let param_len = params.len();
    Ok((ConditionedModel { backbone, prompt: Some(prompt), param_len }, params))
}

/// Mean absolute error and its gradient with respect to `out`.
pub fn l1_loss_and_grad(out: &Feature, target: &Feature) -> (f64, Feature) {
    let n = out.len() as f64;
    let diff = out - target;
    let loss = diff.mapv(f64::abs).sum() / n;
    let grad = diff.mapv(|v| v.signum() / n);
    (loss, grad)
}

/// Converts an image into a (1, H, W) feature without padding.
pub fn image_to_feature(img: &Image) -> Feature {
    let (h, w) = (img.height(), img.width());
    Array3::from_shape_fn((1, h, w), |(_, i, j)| img.pixels()[[i, j]])
}
