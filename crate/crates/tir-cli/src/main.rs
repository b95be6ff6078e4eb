//! `tir`: corpus synthesis, training, evaluation, and inference for the
//! thermal-infrared enhancement toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tir_core::checkpoint::Checkpoint;
use tir_core::config::ExperimentConfig;
use tir_core::dataset::build_manifests;
use tir_core::degrade::{Gates, Scenario, StepKind, Tier};
use tir_core::eval::{
    ablate_order, ablate_prompts, evaluate_samples, iteration_analysis, load_subset,
    restore_with_plan, save_iteration_artifacts, synthesize_subset, EvalOptions, EvalReport,
    SubsetKind,
};
use tir_core::image::{load_image, save_image};
use tir_core::model::ConditionedModel;
use tir_core::trainer::{TrainSession, Variant};
use tir_core::Image;

#[derive(Parser)]
#[command(name = "tir", version, about = "Thermal-infrared image enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TierArg {
    Normal,
    Hard,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Tier {
        match t {
            TierArg::Normal => Tier::Normal,
            TierArg::Hard => Tier::Hard,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Composite,
    Single,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Baseline,
    Iter,
    Dsp,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Iter => Variant::Iter,
            VariantArg::Dsp => Variant::Dsp,
            VariantArg::Full => Variant::Full,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateArg {
    Order,
    Prompts,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a degraded corpus with spec sidecars.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Severity tier for the sampled parameters.
        #[arg(long, value_enum, default_value = "hard")]
        tier: TierArg,
        /// Composite chains or per-operator single subsets.
        #[arg(long, value_enum, default_value = "composite")]
        scenario: ScenarioArg,
        /// Also build the five standard test subsets.
        #[arg(long)]
        test_subsets: bool,
        /// Overwrite an existing corpus directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model with selective progressive training.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Total optimizer steps (overrides the config schedule).
        #[arg(long)]
        steps: Option<u64>,
        /// Ablation preset (overrides the config).
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a synthesized subset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint file to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Subset directory name under <output_dir>/subsets.
        #[arg(long, default_value = "hard")]
        subset: String,
        /// Run a sensitivity ablation instead of a plain report.
        #[arg(long, value_enum)]
        ablate: Option<AblateArg>,
        /// Emit per-iteration images and error maps for each sample.
        #[arg(long)]
        save_iterations: bool,
    },
    /// Restore a single image with an explicit removal plan.
    Infer {
        /// Checkpoint file.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image (grayscale PNG or TIFF).
        input: PathBuf,
        /// Output path; defaults to `<input stem>.enhanced.png`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated removal steps, e.g. `noise,blur,contrast`.
        #[arg(long)]
        plan: String,
        /// Type prompt: composite or single.
        #[arg(long = "type", value_enum, default_value = "composite")]
        type_prompt: ScenarioArg,
        /// Write each intermediate pass next to the output.
        #[arg(long)]
        save_iterations: bool,
    },
}

/// Usage and configuration problems exit 1, runtime failures exit 2.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(config_err)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.output_dir {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Clean images sorted by id; ids are file stems relative to the dir.
fn load_clean_images(dir: &Path) -> anyhow::Result<Vec<(String, Image)>> {
    let (train, val) = build_manifests(dir, 0, 1.0)?;
    debug_assert!(val.is_empty());
    let mut out = Vec::with_capacity(train.len());
    let mut entries = train.entries.clone();
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for e in &entries {
        let img = load_image(dir.join(&e.relative_path))
            .with_context(|| format!("loading {}", e.relative_path.display()))?;
        out.push((e.image_id.clone(), img));
    }
    Ok(out)
}

fn guard_overwrite(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() && !force {
        return Err(runtime_err(anyhow::anyhow!(
            "refusing to overwrite {} (pass --force to allow)",
            dir.display()
        )));
    }
    if dir.exists() {
        fs::remove_dir_all(dir)
            .with_context(|| format!("clearing {}", dir.display()))
            .map_err(runtime_err)?;
    }
    Ok(())
}

fn parse_plan(plan: &str) -> anyhow::Result<Vec<StepKind>> {
    plan.split(',')
        .map(|s| match s.trim() {
            "noise" => Ok(StepKind::Noise),
            "blur" => Ok(StepKind::Blur),
            "contrast" => Ok(StepKind::Contrast),
            other => bail!("unknown removal step {other:?} (expected noise, blur, or contrast)"),
        })
        .collect()
}

fn load_model(ckpt: &Checkpoint) -> anyhow::Result<(ConditionedModel, Vec<f64>)> {
    let (model, _) = ConditionedModel::build(ckpt.backbone_config, ckpt.prompt_config, 0)?;
    if model.param_len() != ckpt.params.len() {
        bail!("checkpoint parameter count does not match its stored configuration");
    }
    Ok((model, ckpt.params.clone()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { common, tier, scenario, test_subsets, force } => {
            let cfg = load_config(&common)?;
            run_synth(&cfg, tier.into(), scenario, test_subsets, force)
        }
        Command::Train { common, steps, variant, resume } => {
            let mut cfg = load_config(&common)?;
            if let Some(steps) = steps {
                cfg.train.steps = Some(steps);
            }
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            run_train(&cfg, resume.as_deref()).map_err(runtime_err)
        }
        Command::Eval { common, ckpt, subset, ablate, save_iterations } => {
            let cfg = load_config(&common)?;
            run_eval(&cfg, &ckpt, &subset, ablate, save_iterations).map_err(runtime_err)
        }
        Command::Infer { ckpt, input, output, plan, type_prompt, save_iterations } => {
            run_infer(&ckpt, &input, output.as_deref(), &plan, type_prompt, save_iterations)
                .map_err(runtime_err)
        }
    }
}

fn run_synth(
    cfg: &ExperimentConfig,
    tier: Tier,
    scenario: ScenarioArg,
    test_subsets: bool,
    force: bool,
) -> Result<(), Failure> {
    let clean = load_clean_images(&cfg.clean_dir).map_err(runtime_err)?;
    let root = cfg.output_dir.join("subsets");
    let tier_name = match tier {
        Tier::Normal => "normal",
        Tier::Hard => "hard",
    };

    // (dir name, gates, scenario, tier, seed offset)
    let all = Gates { contrast: true, blur: true, noise: true };
    let jobs: Vec<(String, Gates, Scenario, Tier, u64)> = if test_subsets {
        SubsetKind::ALL
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.dir_name().to_string(), s.gates(), s.scenario(), s.tier(), i as u64))
            .collect()
    } else {
        match scenario {
            ScenarioArg::Composite => {
                vec![(tier_name.to_string(), all, Scenario::Composite, tier, 1)]
            }
            ScenarioArg::Single => {
                // Hard-tier single subsets use the standard names the
                // evaluator expects; other tiers get a prefix.
                let name = |op: &str| {
                    if tier == Tier::Hard {
                        format!("single-{op}")
                    } else {
                        format!("{tier_name}-single-{op}")
                    }
                };
                let g = |c, b, n| Gates { contrast: c, blur: b, noise: n };
                vec![
                    (name("noise"), g(false, false, true), Scenario::Single, tier, 2),
                    (name("blur"), g(false, true, false), Scenario::Single, tier, 3),
                    (name("contrast"), g(true, false, false), Scenario::Single, tier, 4),
                ]
            }
        }
    };

    for (name, gates, scn, job_tier, offset) in &jobs {
        let dir = root.join(name);
        guard_overwrite(&dir, force)?;
        synthesize_subset(
            &clean,
            &dir,
            &cfg.ranges,
            *job_tier,
            *gates,
            *scn,
            name,
            cfg.seed.wrapping_add(*offset),
        )
        .map_err(runtime_err)?;
        let manifest = serde_json::json!({
            "subset": name,
            "tier": match *job_tier { Tier::Normal => "normal", Tier::Hard => "hard" },
            "seed": cfg.seed,
            "config_hash": cfg.hash(),
            "images": clean.len(),
        });
        let mpath = dir.join("synth-manifest.json");
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest).expect("serializes"))
            .with_context(|| format!("writing {}", mpath.display()))
            .map_err(runtime_err)?;
        println!("wrote {} ({} images)", dir.display(), clean.len());
    }
    Ok(())
}

fn run_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> anyhow::Result<()> {
    let (train_manifest, _val) = build_manifests(&cfg.clean_dir, cfg.seed, cfg.train_fraction)?;
    let mut images = Vec::with_capacity(train_manifest.len());
    for (i, e) in train_manifest.entries.iter().enumerate() {
        images.push((e.image_id.clone(), train_manifest.load_entry(i)?));
    }
    images.sort_by(|a, b| a.0.cmp(&b.0));

    let mut session = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            println!("resuming from {} at step {}", path.display(), ckpt.global_step);
            ckpt.into_session()?
        }
        None => {
            let pcfg = cfg.variant.wrapped().then_some(cfg.prompt);
            let (model, params) = ConditionedModel::build(cfg.backbone, pcfg, cfg.seed)?;
            TrainSession::new(model, params, cfg.train, cfg.ranges.clone(), cfg.variant)?
        }
    };

    let total = session.cfg.total_steps(images.len());
    let train_dir = cfg.output_dir.join("train");
    fs::create_dir_all(&train_dir)?;
    let log_path = train_dir.join("log.jsonl");
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;

    let hash = cfg.hash();
    use std::io::Write;
    while session.step < total {
        let step_log = session.train_step(&images, total)?;
        let mean_loss: f64 = {
            let losses: Vec<f64> = step_log
                .samples
                .iter()
                .flat_map(|s| s.records.iter().map(|r| r.loss_value))
                .collect();
            if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 }
        };
        writeln!(log, "{}", serde_json::to_string(&step_log)?)?;
        if session.step % 100 == 0 || session.step == total {
            println!("step {}/{total} lr {:.3e} loss {mean_loss:.6}", session.step, step_log.lr);
        }
        if session.step % session.cfg.checkpoint_every == 0 || session.step == total {
            let ckpt = Checkpoint::from_session(&session, Some(hash.clone()));
            ckpt.save(train_dir.join(format!("ckpt-step{}.json", session.step)))?;
            ckpt.save(train_dir.join("ckpt-latest.json"))?;
        }
    }
    let final_path = train_dir.join("ckpt-latest.json");
    println!("checkpoint: {}", final_path.display());
    Ok(())
}

fn run_eval(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    subset: &str,
    ablate: Option<AblateArg>,
    save_iterations: bool,
) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (model, params) = load_model(&ckpt)?;
    let subset_dir = cfg.output_dir.join("subsets").join(subset);
    if !subset_dir.is_dir() {
        bail!(
            "subset directory {} not found (run `tir synth` first)",
            subset_dir.display()
        );
    }
    let samples = load_subset(&subset_dir)?;
    let report_dir = cfg.output_dir.join("reports");
    fs::create_dir_all(&report_dir)?;
    let ckpt_id = ckpt_path.file_stem().map(|s| s.to_string_lossy().into_owned());

    let stamp = |mut r: EvalReport| {
        r.checkpoint_id = ckpt_id.clone();
        r.config_hash = Some(cfg.hash());
        r
    };
    let write_report = |r: &EvalReport, name: &str| -> anyhow::Result<()> {
        let json_path = report_dir.join(format!("{name}.json"));
        fs::write(&json_path, serde_json::to_vec_pretty(r)?)?;
        fs::write(report_dir.join(format!("{name}.txt")), r.render_table())?;
        println!("{}", r.render_table());
        println!("report: {}", json_path.display());
        Ok(())
    };

    match ablate {
        None => {
            let report = stamp(evaluate_samples(
                &model,
                &params,
                &samples,
                subset,
                &EvalOptions::default(),
            )?);
            write_report(&report, subset)?;
        }
        Some(AblateArg::Prompts) => {
            let (composite, single) = ablate_prompts(&model, &params, &samples)?;
            write_report(&stamp(composite), &format!("{subset}-composite-prompt"))?;
            write_report(&stamp(single), &format!("{subset}-single-prompt"))?;
        }
        Some(AblateArg::Order) => {
            let results = ablate_order(&model, &params, &samples)?;
            for r in &results {
                write_report(&stamp(r.report.clone()), &format!("{subset}-order-{}", r.report.label))?;
            }
        }
    }

    if save_iterations {
        let iter_dir = report_dir.join(format!("{subset}-iterations"));
        for s in &samples {
            let analysis = iteration_analysis(&model, &params, s)?;
            save_iteration_artifacts(&analysis, &iter_dir, &s.sidecar.image_id)?;
        }
        println!("iteration artifacts: {}", iter_dir.display());
    }
    Ok(())
}

fn run_infer(
    ckpt_path: &Path,
    input: &Path,
    output: Option<&Path>,
    plan: &str,
    type_prompt: ScenarioArg,
    save_iterations: bool,
) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (model, params) = load_model(&ckpt)?;
    let plan = parse_plan(plan)?;
    if plan.is_empty() {
        bail!("removal plan is empty");
    }
    let scenario = match type_prompt {
        ScenarioArg::Composite => Scenario::Composite,
        ScenarioArg::Single => Scenario::Single,
    };
    let img = load_image(input)?;
    let outputs = restore_with_plan(&model, &params, &img, &plan, scenario);

    let out_path = output.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = input.file_stem().unwrap_or_default().to_string_lossy();
        input.with_file_name(format!("{stem}.enhanced.png"))
    });
    let depth = img.source_depth();
    save_image(outputs.last().expect("plan is non-empty"), &out_path, depth)?;
    println!("wrote {}", out_path.display());

    if save_iterations {
        for (i, out) in outputs.iter().enumerate() {
            let stem = out_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let p = out_path.with_file_name(format!("{stem}.pass{}.png", i + 1));
            save_image(out, &p, depth)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
