use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::Serialize;
use spatchgan::checkpoint::{load_checkpoint, CheckpointBundle};
use spatchgan::config::ExperimentConfig;
use spatchgan::data::{augment_none, decode_image, list_images, toy, write_image, DataError, DatasetSpec, PairedBatches};
use spatchgan::discriminator::DiscriminatorVariant;
use spatchgan::feature_stats::StatKind;
use spatchgan::generators::downscale_u;
use spatchgan::image::ImageBatch;
use spatchgan::metrics::{compare_embeddings, embed_images, embedder_by_tag, evaluate, EmbeddingModel};
use spatchgan::trainer::{run_training, Models, RunOptions, StepReport, TrainError, TrainHooks};

use crate::error::CliError;
use crate::{plot, Cli, Command, GlobalFlags};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const EVAL_LOG: &str = "eval.csv";
pub const SAMPLES_DIR: &str = "samples";
pub const LOW_RES_DIR: &str = "low_res_cycle";
pub const DISC_CSV: &str = "disc_outputs.csv";
pub const DISC_PLOT: &str = "disc_means.png";
pub const METRICS_JSON: &str = "metrics.json";
pub const TOY_CONFIG: &str = "toy.toml";
/// Translated images saved per evaluation.
const SAMPLES_SAVED: usize = 8;
const CHUNK: usize = 8;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let flags = &cli.global;
    match &cli.command {
        Command::Train { source, target } => train(flags, source.as_deref(), target.as_deref()),
        Command::Translate {
            checkpoint,
            input,
            low_res_cycle,
        } => translate(flags, checkpoint, input, *low_res_cycle),
        Command::InspectDisc { checkpoint, input, plot } => inspect_disc(flags, checkpoint, input, *plot),
        Command::Evaluate {
            generated,
            reference,
            embedder,
            kid_block,
            size,
        } => cmd_evaluate(flags, generated, reference, embedder.as_deref(), *kid_block, *size),
        Command::MakeToyData { count, size } => make_toy_data(flags, *count, *size),
    }
}

/// What a training run was started from, stored in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub resume_from: Option<PathBuf>,
    pub model_hash: String,
}

fn require_out(flags: &GlobalFlags) -> Result<PathBuf, CliError> {
    flags.out.clone().ok_or_else(|| CliError::input("this command needs --out DIR"))
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::internal(format!("cannot write {}: {e}", path.display()))
}

/// Reads `--config` (relative data directories are taken relative to the
/// file) or the defaults, then applies the flag overrides.
pub fn load_config(flags: &GlobalFlags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for dir in [&mut cfg.data.source_dir, &mut cfg.data.target_dir] {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, flags)?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, flags: &GlobalFlags) -> Result<(), CliError> {
    if let Some(seed) = flags.seed {
        cfg.train.seed = seed;
    }
    if let Some(v) = &flags.variant {
        cfg.model.discriminator.variant = v.parse::<DiscriminatorVariant>().map_err(CliError::input)?;
    }
    if let Some(list) = &flags.stats {
        let stats = list
            .split(',')
            .map(|s| s.trim().parse::<StatKind>().map_err(CliError::input))
            .collect::<Result<Vec<_>, _>>()?;
        cfg.model.discriminator.enabled_stats = stats;
    }
    if let Some(iters) = flags.iters {
        let sched = cfg.train.schedule();
        let warmup = match sched.total_iters {
            0 => 0,
            total => (sched.warmup_iters as u128 * iters as u128 / total as u128) as u64,
        };
        cfg.train.total_iters = iters;
        cfg.train.warmup_iters = warmup;
        cfg.train.checkpoint_interval = sched.checkpoint_interval;
        cfg.train.eval_interval = sched.eval_interval;
        cfg.train.scale_down = 1;
    }
    cfg.validate()?;
    Ok(())
}

/// The checkpoint's own config, or `--config` when given, plus overrides.
fn checkpoint_config(flags: &GlobalFlags, bundle: &CheckpointBundle) -> Result<ExperimentConfig, CliError> {
    if flags.config.is_some() {
        return load_config(flags);
    }
    let mut cfg = bundle.header.config.clone();
    apply_overrides(&mut cfg, flags)?;
    Ok(cfg)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(write_err(&tmp))?;
    fs::rename(&tmp, path).map_err(write_err(path))
}

fn manifest_files(dir: &Path, manifest: &RunManifest, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    write_atomic(&dir.join(RUN_MANIFEST), json.as_bytes())?;
    write_atomic(&dir.join(CONFIG_SNAPSHOT), cfg.to_toml().as_bytes())
}

/// A fresh run's directory is assembled under a hidden sibling name and
/// renamed into place, so it never exists without its manifest and config.
/// A resumed run reuses (or creates) the directory.
fn prepare_output(out: &Path, manifest: &RunManifest, cfg: &ExperimentConfig, resume: bool) -> Result<(), CliError> {
    if resume {
        fs::create_dir_all(out).map_err(write_err(out))?;
        return manifest_files(out, manifest, cfg);
    }
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out).map_err(write_err(out))?.next().is_none();
        if !empty {
            return Err(CliError::input(format!(
                "output directory {} already exists and is not empty (use --resume to continue a run)",
                out.display()
            )));
        }
        fs::remove_dir(out).map_err(write_err(out))?;
    }
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(write_err(parent))?;
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(write_err(&staging))?;
    }
    fs::create_dir(&staging).map_err(write_err(&staging))?;
    manifest_files(&staging, manifest, cfg)?;
    fs::rename(&staging, out).map_err(write_err(out))
}

/// Decoded images of a directory with their paths relative to it, resized
/// to `size` and mapped to `[-1, 1]`. Undecodable files are skipped.
fn load_named(dir: &Path, size: usize, limit: Option<usize>) -> Result<Vec<(PathBuf, ImageBatch<f32>)>, CliError> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        if limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        match decode_image(&path) {
            Ok(img) => {
                let rel = path
                    .strip_prefix(dir)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| PathBuf::from(path.file_name().unwrap_or_default()));
                let x = ImageBatch::new(augment_none(&img, size).insert_axis(Axis(0))).expect("finite pixels");
                out.push((rel, x));
            }
            Err(e) => log::warn!("skipping {e}"),
        }
    }
    if out.is_empty() && limit != Some(0) {
        return Err(DataError::Empty(dir.to_path_buf()).into());
    }
    Ok(out)
}

fn stack(images: &[&ImageBatch<f32>]) -> ImageBatch<f32> {
    ImageBatch::concat(images).expect("images share one size")
}

fn save_image(path: &Path, batch: &ImageBatch<f32>, index: usize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(write_err(dir))?;
    }
    write_image(path, &batch.as_array().index_axis(Axis(0), index).to_owned())?;
    Ok(())
}

/// Periodic sample translations and FID/KID against the target domain.
struct EvalHooks {
    out: PathBuf,
    sources: Vec<ImageBatch<f32>>,
    reference: Option<Array2<f64>>,
    embedder: Box<dyn EmbeddingModel>,
    kid_block: Option<usize>,
    batch: usize,
}

impl EvalHooks {
    fn new(cfg: &ExperimentConfig, out: &Path) -> Result<Self, CliError> {
        let n = cfg.eval.num_samples;
        let embedder = embedder_by_tag(&cfg.eval.embedder)?;
        let size = cfg.image_size;
        let sources: Vec<_> = load_named(&cfg.data.source_dir, size, Some(n))?.into_iter().map(|(_, x)| x).collect();
        let targets: Vec<_> = load_named(&cfg.data.target_dir, size, Some(n))?.into_iter().map(|(_, x)| x).collect();
        let reference = if sources.len() >= 2 && targets.len() >= 2 {
            Some(embed_images(embedder.as_ref(), &targets))
        } else {
            if n > 0 {
                log::warn!("fewer than 2 evaluation images; FID/KID are not logged");
            }
            None
        };
        Ok(Self {
            out: out.to_path_buf(),
            sources,
            reference,
            embedder,
            kid_block: cfg.eval.kid_block_size,
            batch: cfg.train.batch_size.max(1),
        })
    }

    fn evaluate(&self, models: &Models, iteration: u64) -> Result<(), CliError> {
        if self.sources.is_empty() {
            return Ok(());
        }
        let mut generated = Vec::new();
        for chunk in self.sources.chunks(self.batch) {
            let refs: Vec<_> = chunk.iter().collect();
            let y = models.gen.translate(&stack(&refs))?;
            generated.extend((0..y.batch()).map(|i| y.slice(i, 1)));
        }
        let dir = self.out.join(SAMPLES_DIR).join(format!("iter_{iteration:08}"));
        for (i, y) in generated.iter().take(SAMPLES_SAVED).enumerate() {
            save_image(&dir.join(format!("{i:03}.png")), y, 0)?;
        }
        let Some(reference) = &self.reference else {
            return Ok(());
        };
        let emb = embed_images(self.embedder.as_ref(), &generated);
        let report = compare_embeddings(&emb, reference, self.embedder.as_ref(), self.kid_block)?;
        log::info!("iteration {iteration}: fid {:.4} kid {:.5}", report.fid, report.kid);
        let path = self.out.join(EVAL_LOG);
        let fresh = !path.exists();
        let file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(write_err(&path))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| CliError::internal(format!("cannot write {}: {e}", path.display()));
        if fresh {
            w.write_record(["iteration", "fid", "kid", "n_generated", "n_reference", "embedder"]).map_err(csv_err)?;
        }
        w.write_record([
            iteration.to_string(),
            report.fid.to_string(),
            report.kid.to_string(),
            report.n_generated.to_string(),
            report.n_reference.to_string(),
            report.embedder_tag.clone(),
        ])
        .map_err(csv_err)?;
        w.flush().map_err(write_err(&path))
    }
}

impl TrainHooks for EvalHooks {
    fn on_step(&mut self, r: &StepReport) {
        log::debug!(
            "iteration {} lr {:.3e} d_adv {:.4} g_total {:.4}",
            r.iteration,
            r.lr,
            r.losses.d_adv,
            r.losses.g_total
        );
    }

    fn on_eval(&mut self, models: &Models, iteration: u64) -> Result<(), TrainError> {
        self.evaluate(models, iteration).map_err(|e| TrainError::Hook(e.to_string()))
    }
}

fn train(flags: &GlobalFlags, source: Option<&Path>, target: Option<&Path>) -> Result<(), CliError> {
    let out = require_out(flags)?;
    let bundle = flags.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = match &bundle {
        Some(b) => checkpoint_config(flags, b)?,
        None => load_config(flags)?,
    };
    if let Some(s) = source {
        cfg.data.source_dir = s.to_path_buf();
    }
    if let Some(t) = target {
        cfg.data.target_dir = t.to_path_buf();
    }
    let spec = cfg.dataset_spec();
    let mut batches = PairedBatches::from_spec(&spec, cfg.train.batch_size, cfg.train.seed, cfg.data.preload)?;
    let mut models = match &bundle {
        Some(b) => Models::from_checkpoint(&cfg, b)?,
        None => Models::new(&cfg)?,
    };
    let manifest = RunManifest {
        command: "train".into(),
        config_path: flags.config.clone(),
        dataset: spec,
        output_dir: out.clone(),
        seed: cfg.train.seed,
        resume_from: flags.resume.clone(),
        model_hash: cfg.model_hash(),
    };
    prepare_output(&out, &manifest, &cfg, bundle.is_some())?;
    let mut hooks = EvalHooks::new(&cfg, &out)?;
    if bundle.is_none() {
        hooks.evaluate(&models, 0)?;
    }
    let summary = run_training(&cfg, &mut models, &mut batches, &out, &mut hooks, &RunOptions::default())?;
    println!(
        "trained to iteration {}; last checkpoint {}",
        summary.iterations_done,
        summary.last_checkpoint.display()
    );
    Ok(())
}

fn translate(flags: &GlobalFlags, checkpoint: &Path, input: &Path, low_res_cycle: bool) -> Result<(), CliError> {
    let out = require_out(flags)?;
    let bundle = load_checkpoint(checkpoint)?;
    let cfg = checkpoint_config(flags, &bundle)?;
    let models = Models::from_checkpoint(&cfg, &bundle)?;
    let images = load_named(input, cfg.image_size, None)?;
    fs::create_dir_all(&out).map_err(write_err(&out))?;
    for chunk in images.chunks(CHUNK) {
        let refs: Vec<_> = chunk.iter().map(|(_, x)| x).collect();
        let y = models.gen.translate(&stack(&refs))?;
        let cycle = if low_res_cycle {
            Some(models.back.reconstruct_low(&downscale_u(&y)?)?)
        } else {
            None
        };
        for (i, (name, _)) in chunk.iter().enumerate() {
            save_image(&out.join(name), &y, i)?;
            if let Some(c) = &cycle {
                save_image(&out.join(LOW_RES_DIR).join(name), c, i)?;
            }
        }
    }
    println!("translated {} images into {}", images.len(), out.display());
    Ok(())
}

fn inspect_disc(flags: &GlobalFlags, checkpoint: &Path, input: &Path, plot: bool) -> Result<(), CliError> {
    let out = require_out(flags)?;
    let bundle = load_checkpoint(checkpoint)?;
    let cfg = checkpoint_config(flags, &bundle)?;
    let models = Models::from_checkpoint(&cfg, &bundle)?;
    let images = load_named(input, cfg.image_size, None)?;
    let labels: Vec<String> = models.disc.head_labels().iter().map(|l| l.to_string()).collect();
    let mut rows: Vec<(String, Vec<f32>)> = Vec::new();
    for chunk in images.chunks(CHUNK) {
        let refs: Vec<_> = chunk.iter().map(|(_, x)| x).collect();
        let grid = models.disc.discriminate(&stack(&refs))?;
        for (i, (name, _)) in chunk.iter().enumerate() {
            rows.push((name.to_string_lossy().into_owned(), grid.values.row(i).to_vec()));
        }
    }
    let means: Vec<f64> = (0..labels.len())
        .map(|j| rows.iter().map(|(_, v)| v[j] as f64).sum::<f64>() / rows.len() as f64)
        .collect();

    fs::create_dir_all(&out).map_err(write_err(&out))?;
    let path = out.join(DISC_CSV);
    let csv_err = |e: csv::Error| CliError::internal(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(std::iter::once("file".to_string()).chain(labels.iter().cloned())).map_err(csv_err)?;
    for (name, values) in &rows {
        w.write_record(std::iter::once(name.clone()).chain(values.iter().map(|v| v.to_string()))).map_err(csv_err)?;
    }
    w.write_record(std::iter::once("MEAN".to_string()).chain(means.iter().map(|v| v.to_string()))).map_err(csv_err)?;
    w.flush().map_err(write_err(&path))?;

    for (label, mean) in labels.iter().zip(&means) {
        println!("{label:<10} {mean:.6}");
    }
    if plot {
        let pairs: Vec<(String, f64)> = labels.into_iter().zip(means).collect();
        let png = out.join(DISC_PLOT);
        plot::bar_plot(&pairs)
            .save(&png)
            .map_err(|e| CliError::internal(format!("cannot write {}: {e}", png.display())))?;
    }
    Ok(())
}

fn cmd_evaluate(
    flags: &GlobalFlags,
    generated: &Path,
    reference: &Path,
    embedder: Option<&str>,
    kid_block: Option<usize>,
    size: usize,
) -> Result<(), CliError> {
    let out = require_out(flags)?;
    let cfg = load_config(flags)?;
    if size == 0 {
        return Err(CliError::input("--size must be positive"));
    }
    let model = embedder_by_tag(embedder.unwrap_or(&cfg.eval.embedder))?;
    let report = evaluate(generated, reference, model.as_ref(), size, kid_block.or(cfg.eval.kid_block_size))?;
    print!("{}", report.table());
    fs::create_dir_all(&out).map_err(write_err(&out))?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    write_atomic(&out.join(METRICS_JSON), json.as_bytes())
}

fn make_toy_data(flags: &GlobalFlags, count: usize, size: usize) -> Result<(), CliError> {
    let out = require_out(flags)?;
    if count == 0 || size == 0 {
        return Err(CliError::input("--count and --size must be positive"));
    }
    toy::write_texture_domains(&out, count, size, flags.seed.unwrap_or(0))?;
    let mut cfg = ExperimentConfig::toy_textures(Path::new(""));
    cfg.image_size = size;
    write_atomic(&out.join(TOY_CONFIG), cfg.to_toml().as_bytes())?;
    println!("wrote {count} source and {count} target images and {} under {}", TOY_CONFIG, out.display());
    Ok(())
}
