//! Dataset-level evaluation: test-subset synthesis, reference metrics,
//! iteration analysis, and the prompt/order ablation runners.

use std::fs;
use std::path::{Path, PathBuf};

use itertools::Itertools;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{
    compose_eq1, sample_spec_with_gates, DegradationSpec, Gates, RangeTable, Scenario, StepKind,
    Tier,
};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::metrics::{psnr, ssim};
use crate::model::{ConditionedModel, PromptSelection};

/// The five test subsets: two composite severity tiers plus one
/// single-degradation subset per operator at hard-tier parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetKind {
    Normal,
    Hard,
    SingleNoise,
    SingleBlur,
    SingleContrast,
}

impl SubsetKind {
    pub const ALL: [SubsetKind; 5] = [
        SubsetKind::Normal,
        SubsetKind::Hard,
        SubsetKind::SingleNoise,
        SubsetKind::SingleBlur,
        SubsetKind::SingleContrast,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            SubsetKind::Normal => "normal",
            SubsetKind::Hard => "hard",
            SubsetKind::SingleNoise => "single-noise",
            SubsetKind::SingleBlur => "single-blur",
            SubsetKind::SingleContrast => "single-contrast",
        }
    }

    pub fn gates(self) -> Gates {
        match self {
            SubsetKind::Normal | SubsetKind::Hard => {
                Gates { contrast: true, blur: true, noise: true }
            }
            SubsetKind::SingleNoise => Gates { contrast: false, blur: false, noise: true },
            SubsetKind::SingleBlur => Gates { contrast: false, blur: true, noise: false },
            SubsetKind::SingleContrast => Gates { contrast: true, blur: false, noise: false },
        }
    }

    pub fn tier(self) -> Tier {
        match self {
            SubsetKind::Normal => Tier::Normal,
            _ => Tier::Hard,
        }
    }

    pub fn scenario(self) -> Scenario {
        match self {
            SubsetKind::Normal | SubsetKind::Hard => Scenario::Composite,
            _ => Scenario::Single,
        }
    }
}

/// Per-image provenance record written beside each degraded image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub image_id: String,
    /// Subset label (directory name), e.g. "hard" or "single-noise".
    pub subset: String,
    pub scenario: Scenario,
    pub spec: DegradationSpec,
    /// Active steps in the order they were added.
    pub step_kinds: Vec<StepKind>,
    /// Path of the clean reference, relative to the sidecar.
    pub clean_path: String,
    /// Path of the degraded image, relative to the sidecar.
    pub degraded_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub image_id: String,
    pub subset: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<MetricResult>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(default)]
    pub checkpoint_id: Option<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn from_rows(label: impl Into<String>, rows: Vec<MetricResult>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("evaluation produced no rows".into()));
        }
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(EvalReport {
            label: label.into(),
            rows,
            mean_psnr,
            mean_ssim,
            checkpoint_id: None,
            config_hash: None,
        })
    }

    /// Plain-text table: one row per image plus the average line.
    pub fn render_table(&self) -> String {
        let id_w = self
            .rows
            .iter()
            .map(|r| r.image_id.len())
            .chain(["image".len(), "average".len()])
            .max()
            .unwrap();
        let mut out = format!("subset: {}\n", self.label);
        out.push_str(&format!("{:<id_w$}  {:>9}  {:>7}\n", "image", "psnr(dB)", "ssim"));
        for r in &self.rows {
            out.push_str(&format!("{:<id_w$}  {:>9.4}  {:>7.4}\n", r.image_id, r.psnr, r.ssim));
        }
        out.push_str(&format!(
            "{:<id_w$}  {:>9.4}  {:>7.4}\n",
            "average", self.mean_psnr, self.mean_ssim
        ));
        out
    }
}

/// Builds all five test subsets under `out_dir`, one directory per
/// subset, each degraded image carrying a spec sidecar. Fully
/// deterministic in `seed`.
pub fn build_test_subsets(
    clean: &[(String, Image)],
    out_dir: &Path,
    table: &RangeTable,
    seed: u64,
) -> Result<()> {
    for (s_idx, subset) in SubsetKind::ALL.into_iter().enumerate() {
        synthesize_subset(
            clean,
            &out_dir.join(subset.dir_name()),
            table,
            subset.tier(),
            subset.gates(),
            subset.scenario(),
            subset.dir_name(),
            seed.wrapping_add(s_idx as u64),
        )?;
    }
    Ok(())
}

/// Writes one degraded subset: for each clean image, a sampled spec
/// with the prescribed gates, the composed degraded image, a clean
/// copy, and a sidecar. Deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_subset(
    clean: &[(String, Image)],
    dir: &Path,
    table: &RangeTable,
    tier: Tier,
    gates: Gates,
    scenario: Scenario,
    label: &str,
    seed: u64,
) -> Result<()> {
    if clean.is_empty() {
        return Err(Error::EmptyDataset("no clean images for subset construction".into()));
    }
    table.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for (id, img) in clean {
        let spec = sample_spec_with_gates(table, tier, gates, &mut rng)?;
        let degraded = compose_eq1(img, &spec)?;
        let clean_path = format!("{id}.clean.png");
        let degraded_path = format!("{id}.png");
        save_image(img, dir.join(&clean_path), 16)?;
        save_image(&degraded, dir.join(&degraded_path), 16)?;
        let sidecar = Sidecar {
            image_id: id.clone(),
            subset: label.to_string(),
            scenario,
            step_kinds: spec.step_kinds(),
            spec,
            clean_path,
            degraded_path,
        };
        let path = dir.join(format!("{id}.json"));
        let body = serde_json::to_vec_pretty(&sidecar)?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// One evaluation sample loaded back from disk.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub sidecar: Sidecar,
    pub clean: Image,
    pub degraded: Image,
}

/// Loads every sidecar-described sample in a subset directory, sorted
/// by image id.
pub fn load_subset(dir: &Path) -> Result<Vec<EvalSample>> {
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        // Subset directories may also carry a synthesis manifest.
        .filter(|p| p.file_name().is_none_or(|n| n != "synth-manifest.json"))
        .collect();
    sidecars.sort();
    let mut samples = Vec::with_capacity(sidecars.len());
    for path in sidecars {
        let body = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_slice(&body)?;
        let clean = load_image(dir.join(&sidecar.clean_path))?;
        let degraded = load_image(dir.join(&sidecar.degraded_path))?;
        samples.push(EvalSample { sidecar, clean, degraded });
    }
    if samples.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no sidecar records found in {}",
            dir.display()
        )));
    }
    Ok(samples)
}

/// Per-call evaluation knobs; `None` fields follow the sidecar.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Removal order override; default is the reverse of the sidecar's
    /// addition order.
    pub removal_plan: Option<Vec<StepKind>>,
    /// Type-prompt override; default follows the sidecar scenario.
    pub type_prompt: Option<Scenario>,
}

fn default_plan(sidecar: &Sidecar) -> Vec<StepKind> {
    sidecar.step_kinds.iter().rev().copied().collect()
}

fn effective_type(sidecar: &Sidecar) -> Scenario {
    // A one-step chain is a single-degradation sample regardless of the
    // subset's nominal scenario.
    if sidecar.step_kinds.len() > 1 { sidecar.scenario } else { Scenario::Single }
}

/// Runs sequential restoration passes in `plan` order, returning every
/// intermediate output (last element is the final restoration).
pub fn restore_with_plan(
    model: &ConditionedModel,
    params: &[f64],
    degraded: &Image,
    plan: &[StepKind],
    type_prompt: Scenario,
) -> Vec<Image> {
    let mut outputs = Vec::with_capacity(plan.len());
    let mut current = degraded.clone();
    for &deg in plan {
        current =
            model.forward_restore(params, &current, PromptSelection { deg, scenario: type_prompt });
        outputs.push(current.clone());
    }
    outputs
}

/// Evaluates a subset: composite samples get one pass per active step
/// in removal order, single samples one matching pass, metrics against
/// the clean reference.
pub fn evaluate_samples(
    model: &ConditionedModel,
    params: &[f64],
    samples: &[EvalSample],
    label: impl Into<String>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let label = label.into();
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let plan = opts.removal_plan.clone().unwrap_or_else(|| default_plan(&s.sidecar));
        let type_prompt = opts.type_prompt.unwrap_or_else(|| effective_type(&s.sidecar));
        let outputs = restore_with_plan(model, params, &s.degraded, &plan, type_prompt);
        let restored = outputs.last().ok_or_else(|| {
            Error::InvalidParameter(format!("empty removal plan for {}", s.sidecar.image_id))
        })?;
        rows.push(MetricResult {
            image_id: s.sidecar.image_id.clone(),
            subset: label.clone(),
            psnr: psnr(restored, &s.clean)?,
            ssim: ssim(restored, &s.clean)?,
        });
    }
    EvalReport::from_rows(label, rows)
}

/// One restoration pass of the iteration analysis.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    /// 1-based pass index in removal order.
    pub pass: usize,
    pub removed: StepKind,
    pub restored: Image,
    /// Absolute error against the clean reference.
    pub error_map: Array2<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-iteration outputs, error maps, and metrics for one sample.
pub fn iteration_analysis(
    model: &ConditionedModel,
    params: &[f64],
    sample: &EvalSample,
) -> Result<Vec<IterationOutput>> {
    let plan = default_plan(&sample.sidecar);
    let type_prompt = effective_type(&sample.sidecar);
    let outputs = restore_with_plan(model, params, &sample.degraded, &plan, type_prompt);
    plan.iter()
        .zip(outputs)
        .enumerate()
        .map(|(i, (&removed, restored))| {
            let error_map = (restored.pixels() - sample.clean.pixels()).mapv(f64::abs);
            Ok(IterationOutput {
                pass: i + 1,
                removed,
                psnr: psnr(&restored, &sample.clean)?,
                ssim: ssim(&restored, &sample.clean)?,
                restored,
                error_map,
            })
        })
        .collect()
}

/// Error magnitude to pseudo-color: 0 maps to blue, saturating red at
/// 0.25, with a green mid-band (r = t, g = 4t(1-t), b = 1-t for
/// t = min(err/0.25, 1)).
pub fn error_to_rgb(err: f64) -> [u8; 3] {
    let t = (err.abs() / 0.25).clamp(0.0, 1.0);
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(t), q(4.0 * t * (1.0 - t)), q(1.0 - t)]
}

/// Writes an error map as an 8-bit RGB PNG with the documented
/// pseudo-color mapping.
pub fn save_error_map(map: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for ((i, j), &v) in map.indexed_iter() {
        buf.put_pixel(j as u32, i as u32, image::Rgb(error_to_rgb(v)));
    }
    buf.save(path).map_err(|e| Error::Codec { path: path.to_path_buf(), source: e })
}

/// Writes each iteration's restored image and pseudo-color error map.
pub fn save_iteration_artifacts(
    analysis: &[IterationOutput],
    dir: &Path,
    image_id: &str,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for it in analysis {
        let stem = format!("{image_id}.pass{}", it.pass);
        save_image(&it.restored, dir.join(format!("{stem}.png")), 16)?;
        save_error_map(&it.error_map, dir.join(format!("{stem}.err.png")))?;
    }
    Ok(())
}

/// Correct (composite) versus incorrect (single) type prompt on a
/// composite subset, same removal order.
pub fn ablate_prompts(
    model: &ConditionedModel,
    params: &[f64],
    samples: &[EvalSample],
) -> Result<(EvalReport, EvalReport)> {
    let composite = evaluate_samples(
        model,
        params,
        samples,
        "composite-prompt",
        &EvalOptions { type_prompt: Some(Scenario::Composite), ..Default::default() },
    )?;
    let single = evaluate_samples(
        model,
        params,
        samples,
        "single-prompt",
        &EvalOptions { type_prompt: Some(Scenario::Single), ..Default::default() },
    )?;
    Ok((composite, single))
}

#[derive(Debug, Clone)]
pub struct OrderResult {
    pub order: Vec<StepKind>,
    pub report: EvalReport,
}

/// Evaluates every permutation of the removal order. All samples must
/// share one set of active steps.
pub fn ablate_order(
    model: &ConditionedModel,
    params: &[f64],
    samples: &[EvalSample],
) -> Result<Vec<OrderResult>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyDataset("order ablation needs samples".into()))?;
    let steps = default_plan(&first.sidecar);
    for s in samples {
        if default_plan(&s.sidecar) != steps {
            return Err(Error::InvalidParameter(format!(
                "order ablation requires uniform active steps; {} differs",
                s.sidecar.image_id
            )));
        }
    }
    let mut results = Vec::new();
    for perm in steps.iter().copied().permutations(steps.len()) {
        let label = perm.iter().map(|k| format!("{k:?}").to_lowercase()).join("-");
        let report = evaluate_samples(
            model,
            params,
            samples,
            label,
            &EvalOptions { removal_plan: Some(perm.clone()), ..Default::default() },
        )?;
        results.push(OrderResult { order: perm, report });
    }
    Ok(results)
}
