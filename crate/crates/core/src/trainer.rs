//! Training loop: learning-rate schedule, alternating updates, checkpoints
//! and the metrics log.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{Graph, Var};
use ndarray::ArrayD;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, CheckpointBundle, CheckpointError, CheckpointHeader};
use crate::config::{ExperimentConfig, TrainConfig};
use crate::data::{derive_seed, BatchSource, DataError};
use crate::feature_stats::StatsError;
use crate::discriminator::{build_discriminator, Discriminator, DiscriminatorError, InputShape};
use crate::generators::{BackwardGenerator, ForwardGenerator, GeneratorError};
use crate::image::{ImageBatch, ImageError};
use crate::losses::{
    d_adversarial_term, g_adversarial_per_head, g_adversarial_term, generator_objective, identity_term,
    total_generator_loss, weak_cycle_term, LossComponents, LossError, LossReport,
};
use crate::optim::AdamW;
use crate::params::{ParamStore, StateBlocks};

pub const METRICS_LOG: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const DIAGNOSTICS_DIR: &str = "diagnostics";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("iteration {iteration} is outside the schedule [0, {total}]")]
    IterationOutOfRange { iteration: u64, total: u64 },
    #[error("non-finite {phase} update at iteration {iteration}: {detail}")]
    NonFinite {
        iteration: u64,
        phase: &'static str,
        detail: String,
        diagnostics: Box<Diagnostics>,
    },
    #[error("batch has shape {found:?}, expected {expected:?}")]
    BatchShape { expected: [usize; 4], found: [usize; 4] },
    #[error(transparent)]
    Discriminator(#[from] DiscriminatorError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("{0}")]
    Hook(String),
}

fn output_err(path: &Path) -> impl FnOnce(String) -> TrainError + '_ {
    move |message| TrainError::Output {
        path: path.to_path_buf(),
        message,
    }
}

/// Learning rate at `iteration` of the (already scaled) schedule: constant
/// through warm-up, then linear down to `lr_end` at `total_iters`.
pub fn lr_at(iteration: u64, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let s = cfg.schedule();
    if iteration > s.total_iters {
        return Err(TrainError::IterationOutOfRange {
            iteration,
            total: s.total_iters,
        });
    }
    if iteration < s.warmup_iters {
        return Ok(cfg.lr_start);
    }
    let span = s.total_iters - s.warmup_iters;
    if span == 0 {
        return Ok(cfg.lr_end);
    }
    let frac = (iteration - s.warmup_iters) as f64 / span as f64;
    Ok(cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac)
}

/// Values recorded when an update produced a non-finite loss or gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iteration: u64,
    pub phase: String,
    pub lr: f64,
    pub losses: BTreeMap<String, f64>,
    /// Parameters whose gradient has non-finite entries.
    pub bad_gradients: Vec<String>,
    /// Parameters whose value has non-finite entries.
    pub bad_parameters: Vec<String>,
    pub source_range: (f32, f32),
    pub target_range: (f32, f32),
}

/// One iteration's losses and per-head mean discriminator outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub iteration: u64,
    pub lr: f64,
    pub losses: LossReport,
    pub head_labels: Vec<String>,
    /// Mean D output per head on the target-domain batch.
    pub d_real_means: Vec<f64>,
    /// Mean D output per head on the translated batch.
    pub d_fake_means: Vec<f64>,
}

/// Generators, discriminator and their optimizer states.
#[derive(Clone)]
pub struct Models {
    pub gen: ForwardGenerator<f32>,
    pub back: BackwardGenerator<f32>,
    pub disc: Discriminator<f32>,
    pub opt_gen: AdamW<f32>,
    pub opt_back: AdamW<f32>,
    pub opt_disc: AdamW<f32>,
    /// Completed iterations.
    pub iteration: u64,
}

const NETS: [&str; 3] = ["gen", "back", "disc"];

impl Models {
    /// Fresh networks, each seeded from `train.seed`.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, TrainError> {
        let seed = cfg.train.seed;
        let size = cfg.image_size;
        let gcfg = &cfg.model.generator;
        let gen = ForwardGenerator::new(gcfg, size, size, derive_seed(seed, &[101]))?;
        let back = BackwardGenerator::new(gcfg, size, size, derive_seed(seed, &[102]))?;
        let disc = build_discriminator(
            &cfg.model.discriminator,
            InputShape::new(gcfg.image_channels, size, size),
            derive_seed(seed, &[103]),
        )?;
        let adam = cfg.train.adam();
        Ok(Self {
            opt_gen: AdamW::new(gen.params(), adam),
            opt_back: AdamW::new(back.params(), adam),
            opt_disc: AdamW::new(disc.params(), adam),
            gen,
            back,
            disc,
            iteration: 0,
        })
    }

    /// Every parameter, spectral-norm vector and optimizer moment.
    pub fn export_blocks(&self) -> StateBlocks<f32> {
        let mut out = BTreeMap::new();
        self.gen.export_state(&mut out);
        self.back.export_state(&mut out);
        self.disc.export_state(&mut out);
        self.opt_gen.export(NETS[0], self.gen.params(), &mut out);
        self.opt_back.export(NETS[1], self.back.params(), &mut out);
        self.opt_disc.export(NETS[2], self.disc.params(), &mut out);
        out
    }

    pub fn to_checkpoint(&self, cfg: &ExperimentConfig) -> CheckpointBundle {
        CheckpointBundle {
            header: CheckpointHeader {
                iteration: self.iteration,
                config_hash: cfg.model_hash(),
                config: cfg.clone(),
                optimizer_steps: NETS
                    .iter()
                    .zip([&self.opt_gen, &self.opt_back, &self.opt_disc])
                    .map(|(n, o)| (n.to_string(), o.steps()))
                    .collect(),
                spectral_iterations: self.disc.spectral().iteration_counts(self.disc.params()),
                precision: "f32".into(),
            },
            blocks: self.export_blocks(),
        }
    }

    /// Builds the networks described by `cfg` and fills them from `bundle`.
    /// Every block must be consumed.
    pub fn from_checkpoint(cfg: &ExperimentConfig, bundle: &CheckpointBundle) -> Result<Self, TrainError> {
        if bundle.header.config_hash != cfg.model_hash() {
            log::warn!("checkpoint was written with a different model configuration");
        }
        let mut m = Self::new(cfg)?;
        let mut blocks = bundle.blocks.clone();
        m.gen.import_state(&mut blocks).map_err(CheckpointError::from)?;
        m.back.import_state(&mut blocks).map_err(CheckpointError::from)?;
        m.disc.import_state(&mut blocks).map_err(CheckpointError::from)?;
        m.opt_gen.import(NETS[0], m.gen.params(), &mut blocks).map_err(CheckpointError::from)?;
        m.opt_back.import(NETS[1], m.back.params(), &mut blocks).map_err(CheckpointError::from)?;
        m.opt_disc.import(NETS[2], m.disc.params(), &mut blocks).map_err(CheckpointError::from)?;
        if let Some(name) = blocks.keys().next() {
            return Err(CheckpointError::UnexpectedBlock(name.clone()).into());
        }
        let steps = &bundle.header.optimizer_steps;
        for (net, opt) in NETS.iter().zip([&mut m.opt_gen, &mut m.opt_back, &mut m.opt_disc]) {
            opt.set_steps(steps.get(*net).copied().unwrap_or(0));
        }
        let counts = &bundle.header.spectral_iterations;
        let store = m.disc.params().clone();
        m.disc.spectral_mut().set_iteration_counts(&store, counts);
        m.iteration = bundle.header.iteration;
        Ok(m)
    }
}

fn nonfinite_names(store: &ParamStore<f32>, grads: Option<&[Option<ArrayD<f32>>]>) -> Vec<String> {
    store
        .iter()
        .enumerate()
        .filter(|(i, p)| match grads {
            Some(g) => g[*i].as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())),
            None => p.value.iter().any(|v| !v.is_finite()),
        })
        .map(|(_, p)| p.name.clone())
        .collect()
}

fn value_range(x: &ImageBatch<f32>) -> (f32, f32) {
    x.as_array()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

struct Failure<'a> {
    iteration: u64,
    lr: f64,
    src: &'a ImageBatch<f32>,
    tgt: &'a ImageBatch<f32>,
}

impl Failure<'_> {
    fn error(
        &self,
        phase: &'static str,
        losses: BTreeMap<String, f64>,
        bad_gradients: Vec<String>,
        bad_parameters: Vec<String>,
    ) -> TrainError {
        let detail = if !bad_gradients.is_empty() {
            format!("gradients of {}", bad_gradients.join(", "))
        } else if !bad_parameters.is_empty() {
            format!("parameters {}", bad_parameters.join(", "))
        } else {
            let bad: Vec<_> = losses.iter().filter(|(_, v)| !v.is_finite()).map(|(k, v)| format!("{k}={v}")).collect();
            format!("losses {}", bad.join(", "))
        };
        TrainError::NonFinite {
            iteration: self.iteration,
            phase,
            detail,
            diagnostics: Box::new(Diagnostics {
                iteration: self.iteration,
                phase: phase.to_string(),
                lr: self.lr,
                losses,
                bad_gradients,
                bad_parameters,
                source_range: value_range(self.src),
                target_range: value_range(self.tgt),
            }),
        }
    }
}

impl Failure<'_> {
    /// Turns a non-finite feature statistic into a [`TrainError::NonFinite`];
    /// other errors pass through.
    fn forward(&self, phase: &'static str, e: DiscriminatorError) -> TrainError {
        match e {
            DiscriminatorError::Stats(s @ StatsError::NonFinite { .. }) => {
                let mut err = self.error(phase, BTreeMap::new(), vec![], vec![]);
                if let TrainError::NonFinite { detail, .. } = &mut err {
                    *detail = s.to_string();
                }
                err
            }
            other => other.into(),
        }
    }
}

fn check_batch(m: &Models, x: &ImageBatch<f32>, batch: usize) -> Result<(), TrainError> {
    let (c, h, w) = m.gen.image_shape();
    let expected = [batch, c, h, w];
    if x.shape() != expected {
        return Err(TrainError::BatchShape {
            expected,
            found: x.shape(),
        });
    }
    Ok(())
}

/// Outcome of the discriminator phase.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorStep {
    pub d_adv: f64,
    pub d_real_means: Vec<f64>,
    pub d_fake_means: Vec<f64>,
}

/// `d_steps` discriminator updates on `[target; G(source)]`, with the
/// spectral-norm vectors advanced before each. G and B are not touched.
/// On a non-finite loss, gradient or parameter the discriminator and its
/// optimizer are restored.
pub fn discriminator_update(
    m: &mut Models,
    src: &ImageBatch<f32>,
    tgt: &ImageBatch<f32>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<DiscriminatorStep, TrainError> {
    let n = src.batch();
    check_batch(m, src, n)?;
    check_batch(m, tgt, n)?;
    let fail = Failure {
        iteration: m.iteration,
        lr,
        src,
        tgt,
    };
    let backup = (m.disc.clone(), m.opt_disc.clone());
    let g = Graph::new();
    let fake = m.gen.forward(g.constant(src.to_dyn()), &m.gen.params().bind(&g, false))?;
    let pair = Var::concat(&[g.constant(tgt.to_dyn()), fake], 0).value();
    let mut step = DiscriminatorStep {
        d_adv: 0.0,
        d_real_means: Vec::new(),
        d_fake_means: Vec::new(),
    };
    for _ in 0..cfg.d_steps.max(1) {
        m.disc.spectral_step();
        let g = Graph::new();
        let bound = m.disc.params().bind(&g, true);
        let out = match m.disc.forward(g.constant(pair.as_ref().clone()), &bound) {
            Ok(out) => out,
            Err(e) => {
                (m.disc, m.opt_disc) = backup;
                return Err(fail.forward("discriminator", e));
            }
        };
        let real = out.narrow_batch(0, n);
        let fake_out = out.narrow_batch(n, n);
        let loss = d_adversarial_term(&real, &fake_out)?;
        step.d_adv = loss.item() as f64;
        step.d_real_means = real.to_grid().head_means();
        step.d_fake_means = fake_out.to_grid().head_means();
        let mut grads = g.backward(loss);
        let grads = m.disc.params().collect_grads(&bound, &mut grads);
        let bad = nonfinite_names(m.disc.params(), Some(&grads));
        if !step.d_adv.is_finite() || !bad.is_empty() {
            (m.disc, m.opt_disc) = backup;
            return Err(fail.error("discriminator", [("d_adv".to_string(), step.d_adv)].into(), bad, vec![]));
        }
        m.opt_disc.step(m.disc.params_mut(), &grads, lr);
        let bad = nonfinite_names(m.disc.params(), None);
        if !bad.is_empty() {
            (m.disc, m.opt_disc) = backup;
            return Err(fail.error("discriminator", [("d_adv".to_string(), step.d_adv)].into(), vec![], bad));
        }
    }
    Ok(step)
}

/// One joint update of G and B on the objective
/// `λadv·g_adv + λcyc·cyc + λid·id`, with D (parameters and spectral
/// vectors) held fixed. The identity term reuses G on the target batch, so
/// G runs once on `[source; target]`. On failure G, B and their optimizers
/// are restored. `d_adv` is copied into the returned report.
pub fn generator_update(
    m: &mut Models,
    src: &ImageBatch<f32>,
    tgt: &ImageBatch<f32>,
    cfg: &TrainConfig,
    lr: f64,
    d_adv: f64,
) -> Result<LossReport, TrainError> {
    let n = src.batch();
    check_batch(m, src, n)?;
    check_batch(m, tgt, n)?;
    let fail = Failure {
        iteration: m.iteration,
        lr,
        src,
        tgt,
    };
    let g = Graph::new();
    let gb = m.gen.params().bind(&g, true);
    let bb = m.back.params().bind(&g, true);
    let db = m.disc.params().bind(&g, false);
    let x1 = g.constant(src.to_dyn());
    let both = m.gen.forward(g.constant(ImageBatch::concat(&[src, tgt])?.to_dyn()), &gb)?;
    let gx1 = both.narrow(0, 0, n);
    let gx2 = both.narrow(0, n, n);
    let dout = m.disc.forward(gx1, &db).map_err(|e| fail.forward("generator", e))?;
    let adv = g_adversarial_term(&dout)?;
    let cyc = weak_cycle_term(x1, gx1, |y| m.back.forward(y, &bb))?;
    let id = identity_term(g.constant(tgt.to_dyn()), gx2)?;
    let total = generator_objective(adv, cyc, id, &cfg.loss);
    let components = LossComponents {
        d_adv,
        g_adv: adv.item() as f64,
        cyc: cyc.item() as f64,
        id: id.item() as f64,
        g_adv_heads: g_adversarial_per_head(&dout),
    };
    let losses = total_generator_loss(&components, &cfg.loss);
    let mut grads = g.backward(total);
    let g_grads = m.gen.params().collect_grads(&gb, &mut grads);
    let b_grads = m.back.params().collect_grads(&bb, &mut grads);
    let mut bad = nonfinite_names(m.gen.params(), Some(&g_grads));
    bad.extend(nonfinite_names(m.back.params(), Some(&b_grads)));
    let values = || {
        [
            ("g_adv", losses.g_adv),
            ("cyc", losses.cyc),
            ("id", losses.id),
            ("g_total", losses.g_total),
        ]
        .map(|(k, v)| (k.to_string(), v))
        .into()
    };
    if !losses.is_finite() || !bad.is_empty() {
        return Err(fail.error("generator", values(), bad, vec![]));
    }
    let backup = (m.gen.clone(), m.back.clone(), m.opt_gen.clone(), m.opt_back.clone());
    m.opt_gen.step(m.gen.params_mut(), &g_grads, lr);
    m.opt_back.step(m.back.params_mut(), &b_grads, lr);
    let mut bad = nonfinite_names(m.gen.params(), None);
    bad.extend(nonfinite_names(m.back.params(), None));
    if !bad.is_empty() {
        (m.gen, m.back, m.opt_gen, m.opt_back) = backup;
        return Err(fail.error("generator", values(), vec![], bad));
    }
    Ok(losses)
}

/// One iteration: [`discriminator_update`], then [`generator_update`] with
/// fresh forward passes through the updated D.
///
/// When a loss, gradient or parameter turns non-finite, every network is
/// left as it was before the call and the error carries a [`Diagnostics`]
/// record.
pub fn train_step(
    m: &mut Models,
    src: &ImageBatch<f32>,
    tgt: &ImageBatch<f32>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepReport, TrainError> {
    let disc_backup = (m.disc.clone(), m.opt_disc.clone());
    let d = discriminator_update(m, src, tgt, cfg, lr)?;
    let losses = match generator_update(m, src, tgt, cfg, lr, d.d_adv) {
        Ok(l) => l,
        Err(e) => {
            (m.disc, m.opt_disc) = disc_backup;
            return Err(e);
        }
    };
    let report = StepReport {
        iteration: m.iteration,
        lr,
        losses,
        head_labels: m.disc.head_labels().iter().map(|l| l.to_string()).collect(),
        d_real_means: d.d_real_means,
        d_fake_means: d.d_fake_means,
    };
    m.iteration += 1;
    Ok(report)
}

/// Append-only CSV of step reports with a header row.
pub struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    pub fn header(head_labels: &[String]) -> Vec<String> {
        let mut h: Vec<String> = ["iteration", "lr", "d_adv", "g_adv", "cyc", "id", "g_total"]
            .map(String::from)
            .into();
        h.extend(head_labels.iter().map(|l| format!("d_real_{l}")));
        h.extend(head_labels.iter().map(|l| format!("d_fake_{l}")));
        h
    }

    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: &Path, head_labels: &[String]) -> Result<Self, TrainError> {
        let err = output_err(path);
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(e.to_string()))?;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer
                .write_record(Self::header(head_labels))
                .map_err(|e| output_err(path)(e.to_string()))?;
            writer.flush().map_err(|e| output_err(path)(e.to_string()))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, r: &StepReport) -> Result<(), TrainError> {
        let l = &r.losses;
        let mut row = vec![r.iteration.to_string(), format!("{:e}", r.lr)];
        row.extend([l.d_adv, l.g_adv, l.cyc, l.id, l.g_total].map(|v| v.to_string()));
        row.extend(r.d_real_means.iter().chain(&r.d_fake_means).map(|v| v.to_string()));
        let err = output_err(&self.path);
        self.writer.write_record(&row).map_err(|e| err(e.to_string()))?;
        self.writer.flush().map_err(|e| output_err(&self.path)(e.to_string()))
    }
}

/// Callbacks invoked by [`run_training`].
pub trait TrainHooks {
    fn on_step(&mut self, _report: &StepReport) {}

    /// Called every `eval_interval` iterations with the number of completed
    /// iterations.
    fn on_eval(&mut self, _models: &Models, _iteration: u64) -> Result<(), TrainError> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop (with a checkpoint) once this many iterations are complete.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations_done: u64,
    pub checkpoints: Vec<PathBuf>,
    pub last_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:08}.spg"))
}

fn write_diagnostics(out_dir: &Path, d: &Diagnostics) -> Result<PathBuf, TrainError> {
    let dir = out_dir.join(DIAGNOSTICS_DIR);
    fs::create_dir_all(&dir).map_err(|e| output_err(&dir)(e.to_string()))?;
    let path = dir.join(format!("iter_{:08}_{}.json", d.iteration, d.phase));
    let text = serde_json::to_string_pretty(d).expect("diagnostics serialise");
    fs::write(&path, text).map_err(|e| output_err(&path)(e.to_string()))?;
    Ok(path)
}

/// Runs the schedule from `models.iteration` to the (scaled) total.
///
/// Batch `k` of `source` feeds iteration `k`, so a run resumed from a
/// checkpoint sees the same data as an uninterrupted one. A checkpoint is
/// written before the first iteration of a fresh run, every
/// `checkpoint_interval` iterations, and at the end. On a non-finite update
/// the diagnostics are written under `diagnostics/` and the error returned.
pub fn run_training(
    cfg: &ExperimentConfig,
    models: &mut Models,
    source: &mut dyn BatchSource,
    out_dir: &Path,
    hooks: &mut dyn TrainHooks,
    opts: &RunOptions,
) -> Result<RunSummary, TrainError> {
    let sched = cfg.train.schedule();
    fs::create_dir_all(out_dir).map_err(|e| output_err(out_dir)(e.to_string()))?;
    let labels: Vec<String> = models.disc.head_labels().iter().map(|l| l.to_string()).collect();
    let metrics_log = out_dir.join(METRICS_LOG);
    let mut log = MetricsLog::open(&metrics_log, &labels)?;
    let mut checkpoints = Vec::new();
    let save = |m: &Models, list: &mut Vec<PathBuf>| -> Result<(), TrainError> {
        let path = checkpoint_path(out_dir, m.iteration);
        save_checkpoint(&m.to_checkpoint(cfg), &path)?;
        list.push(path);
        Ok(())
    };
    if models.iteration == 0 {
        save(models, &mut checkpoints)?;
    }
    if models.iteration > sched.total_iters {
        return Err(TrainError::IterationOutOfRange {
            iteration: models.iteration,
            total: sched.total_iters,
        });
    }
    while models.iteration < sched.total_iters {
        if opts.stop_after.is_some_and(|s| models.iteration >= s) {
            if checkpoints.last() != Some(&checkpoint_path(out_dir, models.iteration)) {
                save(models, &mut checkpoints)?;
            }
            break;
        }
        let k = models.iteration;
        let (src, tgt) = source.batch(k)?;
        let lr = lr_at(k, &cfg.train)?;
        let report = match train_step(models, &src, &tgt, &cfg.train, lr) {
            Ok(r) => r,
            Err(TrainError::NonFinite {
                iteration,
                phase,
                detail,
                diagnostics,
            }) => {
                let path = write_diagnostics(out_dir, &diagnostics)?;
                log::error!("non-finite update at iteration {iteration}; diagnostics in {}", path.display());
                return Err(TrainError::NonFinite {
                    iteration,
                    phase,
                    detail,
                    diagnostics,
                });
            }
            Err(e) => return Err(e),
        };
        let done = models.iteration;
        if done % sched.log_interval == 0 {
            log.append(&report)?;
        }
        hooks.on_step(&report);
        if done % sched.checkpoint_interval == 0 || done == sched.total_iters {
            save(models, &mut checkpoints)?;
        }
        if done % sched.eval_interval == 0 {
            hooks.on_eval(models, done)?;
        }
    }
    let last_checkpoint = match checkpoints.last() {
        Some(p) => p.clone(),
        None => {
            save(models, &mut checkpoints)?;
            checkpoints.last().unwrap().clone()
        }
    };
    Ok(RunSummary {
        iterations_done: models.iteration,
        checkpoints,
        last_checkpoint,
        metrics_log,
    })
}
