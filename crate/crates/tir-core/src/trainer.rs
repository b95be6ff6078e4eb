//! Selective progressive training.
//!
//! One batch processes each sample's degradation chain from the last
//! added step back to the first, accumulating gradients per iteration
//! and applying exactly one optimizer update per batch. Composite
//! chains feed each iteration's restored output into the next with
//! gradient flow severed; single chains use the stored degraded images
//! directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{generate_sequence, sample_spec, Gates, RangeTable, Scenario, StepKind, Tier, TrainingSequence};
use crate::error::{Error, Result};
use crate::image::{crop_at, crop_offset, FlipDecision, Image};
use crate::model::{image_to_feature, l1_loss_and_grad, ConditionedModel, PromptSelection};
use crate::nn::Feature;
use crate::optim::{cosine_lr, Adam};

fn default_batch() -> usize {
    4
}
fn default_crop() -> usize {
    256
}
fn default_lr_init() -> f64 {
    8e-5
}
fn default_lr_final() -> f64 {
    1e-6
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epochs() -> u64 {
    300
}
fn default_gate_prob() -> f64 {
    0.8
}
fn default_scenario_prob() -> f64 {
    0.5
}
fn default_tier() -> Tier {
    Tier::Hard
}
fn default_checkpoint_every() -> u64 {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_crop")]
    pub crop_size: usize,
    #[serde(default = "default_lr_init")]
    pub lr_init: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    /// Desk-scale override: when set, the total number of optimizer
    /// steps; otherwise derived from `epochs` and the dataset size.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default = "default_gate_prob")]
    pub gate_prob: f64,
    #[serde(default = "default_scenario_prob")]
    pub scenario_prob_composite: f64,
    /// Severity tier the training sampler draws from.
    #[serde(default = "default_tier")]
    pub tier: Tier,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str(r#"{"seed": 0}"#).expect("defaults are complete")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_init) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lr_final <= lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(self.gate_prob > 0.0 && self.gate_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gate_prob must be in (0, 1], got {}",
                self.gate_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.scenario_prob_composite) {
            return Err(Error::InvalidConfig(format!(
                "scenario_prob_composite must be in [0, 1], got {}",
                self.scenario_prob_composite
            )));
        }
        if self.batch_size == 0 || self.crop_size == 0 {
            return Err(Error::InvalidConfig("batch_size and crop_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_images: usize) -> u64 {
        self.steps
            .unwrap_or_else(|| self.epochs * (n_images as u64).div_ceil(self.batch_size as u64))
    }
}

/// Ablation presets mirroring the method's component grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain backbone, direct degraded-to-clean training.
    Baseline,
    /// Progressive iteration without prompt conditioning.
    Iter,
    /// Degradation-specific prompts only (type prompt pinned to single).
    Dsp,
    /// Full method: dual prompts with fusion plus progressive training.
    Full,
}

impl Variant {
    pub fn wrapped(self) -> bool {
        matches!(self, Variant::Dsp | Variant::Full)
    }

    pub fn progressive(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn type_conditioning(self) -> bool {
        matches!(self, Variant::Full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtKind {
    Clean,
    PreviousDegraded,
}

/// One inner-loop iteration of Alg.-style progressive training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub input_id: String,
    pub gt_kind: GtKind,
    pub loss_value: f64,
    pub deg_prompt: StepKind,
    pub type_prompt: Scenario,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleLog {
    pub image_id: String,
    pub scenario: Scenario,
    pub gates: Gates,
    pub records: Vec<IterationRecord>,
}

/// Append-only training log record, one per optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub samples: Vec<SampleLog>,
    /// True when a non-finite loss aborted the update for this batch.
    pub skipped: bool,
}

/// Ground-truth image for iteration `k` (1-based): the clean image for
/// single scenarios, the previous degraded image for composite ones.
pub fn select_gt<'a>(
    k: usize,
    scenario: Scenario,
    clean: &'a Image,
    seq: &'a TrainingSequence,
) -> Result<&'a Image> {
    if k == 0 || k > seq.steps() {
        return Err(Error::InvalidParameter(format!(
            "iteration index {k} out of range 1..={}",
            seq.steps()
        )));
    }
    Ok(match scenario {
        Scenario::Single => clean,
        Scenario::Composite => {
            if k == 1 {
                clean
            } else {
                &seq.degraded[k - 2]
            }
        }
    })
}

/// Input for iteration `k - 1`: the stored degraded image for single
/// scenarios, the current restored output (value only, gradient
/// severed) for composite ones.
pub fn next_input(
    k: usize,
    scenario: Scenario,
    seq: &TrainingSequence,
    restored: &Image,
) -> Result<Image> {
    if k < 2 {
        return Err(Error::InvalidParameter(
            "no next input exists after the final removal step (k = 1)".into(),
        ));
    }
    Ok(match scenario {
        Scenario::Single => seq.degraded[k - 2].clone(),
        Scenario::Composite => restored.clone(),
    })
}

fn clamp_feature_to_image(out: &Feature, depth: u8) -> Image {
    let (_, h, w) = out.dim();
    let arr = ndarray::Array2::from_shape_fn((h, w), |(i, j)| out[[0, i, j]]);
    Image::from_clamped(arr, depth)
}

/// Runs the progressive inner loop for one sample, accumulating
/// parameter gradients. Returns the per-iteration records.
fn accumulate_sample(
    model: &ConditionedModel,
    params: &[f64],
    seq: &TrainingSequence,
    image_id: &str,
    variant: Variant,
    grads: &mut [f64],
    step: u64,
) -> Result<Vec<IterationRecord>> {
    let n = seq.steps();
    let mut records = Vec::with_capacity(n);

    // A one-step chain is definitionally a single-degradation scenario.
    let effective_scenario = if n == 1 { Scenario::Single } else { seq.scenario };
    let type_prompt = if variant.type_conditioning() {
        effective_scenario
    } else {
        Scenario::Single
    };

    if !variant.progressive() {
        // Baseline: one direct pass from the fully degraded image.
        let input = image_to_feature(&seq.degraded[n - 1]);
        let target = image_to_feature(&seq.clean);
        let sel = PromptSelection { deg: seq.step_kinds[n - 1], scenario: type_prompt };
        let (out, cache) = model.forward_feature(params, &input, sel);
        let (loss, g_out) = l1_loss_and_grad(&out, &target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, iteration: n });
        }
        model.backward(params, &cache, &g_out, grads);
        records.push(IterationRecord {
            k: n,
            input_id: image_id.to_string(),
            gt_kind: GtKind::Clean,
            loss_value: loss,
            deg_prompt: sel.deg,
            type_prompt,
        });
        return Ok(records);
    }

    let mut input = seq.degraded[n - 1].clone();
    for k in (1..=n).rev() {
        let sel = PromptSelection { deg: seq.step_kinds[k - 1], scenario: type_prompt };
        let x = image_to_feature(&input);
        let (out, cache) = model.forward_feature(params, &x, sel);
        let gt = select_gt(k, effective_scenario, &seq.clean, seq)?;
        let target = image_to_feature(gt);
        let (loss, g_out) = l1_loss_and_grad(&out, &target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, iteration: k });
        }
        // Gradient for this iteration only; the chained input below is a
        // plain value, so no gradient crosses iterations.
        model.backward(params, &cache, &g_out, grads);
        records.push(IterationRecord {
            k,
            input_id: image_id.to_string(),
            gt_kind: match (effective_scenario, k) {
                (Scenario::Single, _) | (Scenario::Composite, 1) => GtKind::Clean,
                _ => GtKind::PreviousDegraded,
            },
            loss_value: loss,
            deg_prompt: sel.deg,
            type_prompt,
        });
        if k >= 2 {
            let restored = clamp_feature_to_image(&out, seq.clean.source_depth());
            input = next_input(k, effective_scenario, seq, &restored)?;
        }
    }
    Ok(records)
}

/// Accumulates one sample's progressive-training gradients into
/// `grads` without touching any optimizer state. Useful for inspecting
/// the raw accumulated gradient of a chain.
pub fn accumulate_gradients(
    model: &ConditionedModel,
    params: &[f64],
    seq: &TrainingSequence,
    image_id: &str,
    variant: Variant,
    grads: &mut [f64],
) -> Result<Vec<IterationRecord>> {
    accumulate_sample(model, params, seq, image_id, variant, grads, 0)
}

/// One batch of progressive training: accumulates gradients across all
/// samples and iterations, then applies exactly one optimizer update.
pub fn spt_step(
    model: &ConditionedModel,
    params: &mut [f64],
    batch: &[(String, TrainingSequence)],
    opt: &mut Adam,
    lr: f64,
    variant: Variant,
    step: u64,
) -> Result<Vec<SampleLog>> {
    let mut grads = vec![0.0; params.len()];
    let mut logs = Vec::with_capacity(batch.len());
    for (image_id, seq) in batch {
        let records = accumulate_sample(model, params, seq, image_id, variant, &mut grads, step)?;
        logs.push(SampleLog {
            image_id: image_id.clone(),
            scenario: seq.scenario,
            gates: seq.spec.gates,
            records,
        });
    }
    // Per-batch normalization divides by batch size only; iteration
    // gradients stay summed.
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        *g *= scale;
    }
    opt.step(params, &grads, lr);
    Ok(logs)
}

/// Live training state; checkpointable and exactly resumable.
#[derive(Debug, Clone)]
pub struct TrainSession {
    pub model: ConditionedModel,
    pub params: Vec<f64>,
    pub opt: Adam,
    pub rng: ChaCha12Rng,
    pub step: u64,
    pub cfg: TrainConfig,
    pub table: RangeTable,
    pub variant: Variant,
}

impl TrainSession {
    pub fn new(
        model: ConditionedModel,
        params: Vec<f64>,
        cfg: TrainConfig,
        mut table: RangeTable,
        variant: Variant,
    ) -> Result<Self> {
        cfg.validate()?;
        table.gate_prob = cfg.gate_prob;
        table.validate()?;
        if cfg.crop_size % model.backbone.cfg.alignment() != 0 {
            return Err(Error::InvalidConfig(format!(
                "crop_size {} must be a multiple of the backbone alignment {}",
                cfg.crop_size,
                model.backbone.cfg.alignment()
            )));
        }
        if variant.wrapped() != model.is_wrapped() {
            return Err(Error::InvalidConfig(format!(
                "variant {variant:?} requires wrapped={} model",
                variant.wrapped()
            )));
        }
        let opt = Adam::new(params.len(), cfg.adam_beta1, cfg.adam_beta2);
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        Ok(TrainSession { model, params, opt, rng, step: 0, cfg, table, variant })
    }

    /// Draws one training sample: image choice, scenario, spec,
    /// sequence generation, then a shared crop and flip.
    fn draw_sample(&mut self, images: &[(String, Image)]) -> Result<(String, TrainingSequence)> {
        let idx = self.rng.gen_range(0..images.len());
        let (id, full) = &images[idx];
        let scenario = if self.rng.gen_bool(self.cfg.scenario_prob_composite) {
            Scenario::Composite
        } else {
            Scenario::Single
        };
        let spec = sample_spec(&self.table, self.cfg.tier, &mut self.rng)?;
        let seq = generate_sequence(full, &spec, scenario)?;

        let size = self.cfg.crop_size;
        if full.height() < size || full.width() < size {
            return Err(Error::ShapeMismatch(format!(
                "image {id} ({}x{}) smaller than crop size {size}",
                full.height(),
                full.width()
            )));
        }
        let (dy, dx) = crop_offset(full.height(), full.width(), size, &mut self.rng);
        let flip = FlipDecision::draw(&mut self.rng);
        let crop = |img: &Image| flip.apply(&crop_at(img, dy, dx, size));
        Ok((
            id.clone(),
            TrainingSequence {
                scenario: seq.scenario,
                clean: crop(&seq.clean),
                degraded: seq.degraded.iter().map(&crop).collect(),
                step_kinds: seq.step_kinds,
                spec: seq.spec,
            },
        ))
    }

    /// Runs one optimizer step over a fresh batch. A non-finite loss
    /// skips the update for this batch instead of aborting the run.
    pub fn train_step(&mut self, images: &[(String, Image)], total_steps: u64) -> Result<StepLog> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("no training images".into()));
        }
        let lr = cosine_lr(self.step, total_steps, self.cfg.lr_init, self.cfg.lr_final);
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            batch.push(self.draw_sample(images)?);
        }
        let result = spt_step(
            &self.model,
            &mut self.params,
            &batch,
            &mut self.opt,
            lr,
            self.variant,
            self.step,
        );
        let log = match result {
            Ok(samples) => StepLog { step: self.step, lr, samples, skipped: false },
            Err(Error::NonFiniteLoss { .. }) => {
                StepLog { step: self.step, lr, samples: Vec::new(), skipped: true }
            }
            Err(e) => return Err(e),
        };
        self.step += 1;
        Ok(log)
    }
}
