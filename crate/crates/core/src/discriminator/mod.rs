//! Discriminators: the statistical-feature discriminator and the multi-scale
//! PatchGAN baseline used for ablations.
//!
//! Both variants emit a list of output *heads*. A statistical head produces
//! one scalar per sample; a patch head produces one scalar per patch. The
//! adversarial losses average each head over batch and patches, then average
//! over heads.

mod patchgan;
mod statistical;

use std::fmt;
use std::str::FromStr;

use autograd::{Graph, Real, Var};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::feature_stats::{StatKind, StatsError};
use crate::image::{ImageBatch, ImageError};
use crate::nn::{Ctx, SpectralRegistry};
use crate::params::{Bound, Initializer, ParamStore, StateBlocks, StateError};

use patchgan::PatchArch;
use statistical::StatArch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorVariant {
    Spatchgan,
    MultiscalePatchgan,
}

impl FromStr for DiscriminatorVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spatchgan" => Ok(Self::Spatchgan),
            "patchgan" | "multiscale_patchgan" => Ok(Self::MultiscalePatchgan),
            other => Err(format!("unknown discriminator variant {other:?} (expected spatchgan or patchgan)")),
        }
    }
}

impl fmt::Display for DiscriminatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Spatchgan => "spatchgan",
            Self::MultiscalePatchgan => "multiscale_patchgan",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Number of backbone scales `M`.
    pub num_scales: usize,
    /// Channels after the initial feature extraction block.
    pub base_channels: usize,
    pub channel_cap: usize,
    /// Fully connected layers per MLP head (hidden width = scale channels).
    pub mlp_layers: usize,
    /// Power iterations per discriminator update.
    pub sn_power_iters: usize,
    /// The statistics `g_n`; `N` is the length of this list.
    pub enabled_stats: Vec<StatKind>,
    pub variant: DiscriminatorVariant,
    pub spectral_norm: bool,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_scales: 4,
            base_channels: 64,
            channel_cap: 512,
            mlp_layers: 3,
            sn_power_iters: 1,
            enabled_stats: StatKind::ALL.to_vec(),
            variant: DiscriminatorVariant::Spatchgan,
            spectral_norm: true,
            leaky_slope: 0.2,
        }
    }
}

/// Number of independent classifiers in the PatchGAN baseline.
pub const PATCHGAN_LEVELS: usize = 3;

impl DiscriminatorConfig {
    pub fn num_stats(&self) -> usize {
        self.enabled_stats.len()
    }

    /// Input height and width must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        match self.variant {
            DiscriminatorVariant::Spatchgan => 4 << self.num_scales,
            // two 2× input reductions, then three stride-2 convolutions
            DiscriminatorVariant::MultiscalePatchgan => 4 << PATCHGAN_LEVELS,
        }
    }

    /// Channels of the scale-`m` feature maps (1-based).
    pub fn scale_channels(&self, scale: usize) -> usize {
        (self.base_channels << (scale - 1).min(30)).min(self.channel_cap)
    }

    pub fn validate(&self, input: InputShape) -> Result<(), DiscriminatorError> {
        if self.variant == DiscriminatorVariant::Spatchgan {
            if self.num_scales == 0 {
                return Err(DiscriminatorError::Config("num_scales must be at least 1".into()));
            }
            if self.enabled_stats.is_empty() {
                return Err(DiscriminatorError::Config("enabled_stats must name at least one statistic".into()));
            }
            for (i, s) in self.enabled_stats.iter().enumerate() {
                if self.enabled_stats[..i].contains(s) {
                    return Err(DiscriminatorError::Config(format!("statistic {s} listed twice")));
                }
            }
            if self.mlp_layers == 0 {
                return Err(DiscriminatorError::Config("mlp_layers must be at least 1".into()));
            }
        }
        if self.base_channels == 0 || self.channel_cap == 0 {
            return Err(DiscriminatorError::Config("channel counts must be positive".into()));
        }
        if input.channels == 0 {
            return Err(DiscriminatorError::Config("input must have at least one channel".into()));
        }
        let d = self.size_divisor();
        if input.height == 0 || input.width == 0 || input.height % d != 0 || input.width % d != 0 {
            return Err(DiscriminatorError::Indivisible {
                height: input.height,
                width: input.width,
                divisor: d,
                examples: (1..=4).map(|k| k * d).collect(),
            });
        }
        Ok(())
    }
}

/// `(channels, height, width)` of the images a discriminator accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiscriminatorError {
    #[error("invalid discriminator configuration: {0}")]
    Config(String),
    #[error(
        "input size {height}x{width} is not divisible by {divisor}; valid sizes are multiples of {divisor}, e.g. {examples:?}"
    )]
    Indivisible {
        height: usize,
        width: usize,
        divisor: usize,
        examples: Vec<usize>,
    },
    #[error("variant {0} is not the multi-scale PatchGAN baseline")]
    NotBaseline(DiscriminatorVariant),
    #[error("expected input of shape {expected}, received {received}")]
    ShapeMismatch { expected: InputShape, received: InputShape },
    #[error("expected {expected} adapted feature maps, received {received}")]
    FeatureCount { expected: usize, received: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Identity of one discriminator output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadLabel {
    /// `D_{m,n}` for scale `m` (1-based) and statistic `n`.
    Stat { scale: usize, stat: StatKind },
    /// One PatchGAN classifier (level 1 is full resolution).
    Patch { level: usize },
}

impl fmt::Display for HeadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadLabel::Stat { scale, stat } => write!(f, "s{scale}_{stat}"),
            HeadLabel::Patch { level } => write!(f, "patch{level}"),
        }
    }
}

/// Discriminator outputs on a graph: one `[N, patches]` variable per head.
pub struct DisOutput<'g, T: Real> {
    pub heads: Vec<(HeadLabel, Var<'g, T>)>,
}

impl<'g, T: Real> DisOutput<'g, T> {
    pub fn batch(&self) -> usize {
        self.heads[0].1.shape()[0]
    }

    pub fn labels(&self) -> Vec<HeadLabel> {
        self.heads.iter().map(|(l, _)| *l).collect()
    }

    pub fn narrow_batch(&self, start: usize, len: usize) -> Self {
        Self {
            heads: self
                .heads
                .iter()
                .map(|(l, v)| (*l, v.narrow(0, start, len)))
                .collect(),
        }
    }

    /// Per-sample values, averaged over patches for patch heads.
    pub fn to_grid(&self) -> DisOutputGrid<T> {
        let n = self.batch();
        let mut values = Array2::zeros((n, self.heads.len()));
        for (j, (_, v)) in self.heads.iter().enumerate() {
            let v = v.value();
            let per_sample = v.mean_axis(Axis(1)).unwrap();
            for i in 0..n {
                values[[i, j]] = per_sample[i];
            }
        }
        DisOutputGrid {
            labels: self.labels(),
            values,
        }
    }

    /// Constant heads holding the values of `grid`, one scalar per sample.
    pub fn from_grid(graph: &'g Graph<T>, grid: &DisOutputGrid<T>) -> Self {
        Self {
            heads: grid
                .labels
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    let col = grid.values.column(j).to_owned().insert_axis(Axis(1));
                    (l, graph.constant(col.into_dyn()))
                })
                .collect(),
        }
    }
}

/// Evaluated discriminator outputs, `values[[sample, head]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisOutputGrid<T: Real> {
    pub labels: Vec<HeadLabel>,
    pub values: Array2<T>,
}

impl<T: Real> DisOutputGrid<T> {
    /// A grid with every entry set to `value`.
    pub fn filled(labels: Vec<HeadLabel>, batch: usize, value: T) -> Self {
        let heads = labels.len();
        Self {
            labels,
            values: Array2::from_elem((batch, heads), value),
        }
    }

    pub fn batch(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_heads(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, sample: usize, label: HeadLabel) -> Option<T> {
        let j = self.labels.iter().position(|&l| l == label)?;
        Some(self.values[[sample, j]])
    }

    /// Batch mean of every head, in label order.
    pub fn head_means(&self) -> Vec<f64> {
        self.values
            .mean_axis(Axis(0))
            .map(|m| m.iter().map(|v| v.as_f64()).collect())
            .unwrap_or_default()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Grid labels for the statistical discriminator, scale-major.
pub fn stat_labels(num_scales: usize, stats: &[StatKind]) -> Vec<HeadLabel> {
    (1..=num_scales)
        .flat_map(|scale| stats.iter().map(move |&stat| HeadLabel::Stat { scale, stat }))
        .collect()
}

#[derive(Clone)]
enum Arch {
    Stat(StatArch),
    Patch(PatchArch),
}

#[derive(Clone)]
pub struct Discriminator<T: Real> {
    cfg: DiscriminatorConfig,
    input: InputShape,
    params: ParamStore<T>,
    spectral: SpectralRegistry<T>,
    arch: Arch,
}

/// Builds the discriminator selected by `cfg.variant`.
pub fn build_discriminator<T: Real>(
    cfg: &DiscriminatorConfig,
    input: InputShape,
    seed: u64,
) -> Result<Discriminator<T>, DiscriminatorError> {
    match cfg.variant {
        DiscriminatorVariant::Spatchgan => {
            cfg.validate(input)?;
            let mut params = ParamStore::new();
            let mut spectral = SpectralRegistry::new();
            let mut init = Initializer::new(seed);
            let arch = StatArch::build(cfg, input, &mut params, &mut spectral, &mut init);
            Ok(Discriminator {
                cfg: cfg.clone(),
                input,
                params,
                spectral,
                arch: Arch::Stat(arch),
            })
        }
        DiscriminatorVariant::MultiscalePatchgan => build_patchgan_baseline(cfg, input, seed),
    }
}

/// Builds the multi-scale PatchGAN baseline. Fails unless the config selects it.
pub fn build_patchgan_baseline<T: Real>(
    cfg: &DiscriminatorConfig,
    input: InputShape,
    seed: u64,
) -> Result<Discriminator<T>, DiscriminatorError> {
    if cfg.variant != DiscriminatorVariant::MultiscalePatchgan {
        return Err(DiscriminatorError::NotBaseline(cfg.variant));
    }
    cfg.validate(input)?;
    let mut params = ParamStore::new();
    let mut spectral = SpectralRegistry::new();
    let mut init = Initializer::new(seed);
    let arch = PatchArch::build(cfg, input, &mut params, &mut spectral, &mut init);
    Ok(Discriminator {
        cfg: cfg.clone(),
        input,
        params,
        spectral,
        arch: Arch::Patch(arch),
    })
}

impl<T: Real> Discriminator<T> {
    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn spectral(&self) -> &SpectralRegistry<T> {
        &self.spectral
    }

    pub fn spectral_mut(&mut self) -> &mut SpectralRegistry<T> {
        &mut self.spectral
    }

    /// Output labels in grid order.
    pub fn head_labels(&self) -> Vec<HeadLabel> {
        match &self.arch {
            Arch::Stat(_) => stat_labels(self.cfg.num_scales, &self.cfg.enabled_stats),
            Arch::Patch(_) => (1..=PATCHGAN_LEVELS).map(|level| HeadLabel::Patch { level }).collect(),
        }
    }

    /// Spatial size of the adapted feature maps per scale (statistical variant)
    /// or of the patch output maps (baseline).
    pub fn scale_sizes(&self) -> Vec<(usize, usize)> {
        match &self.arch {
            Arch::Stat(a) => a.scale_sizes(self.input),
            Arch::Patch(a) => a.output_sizes(self.input),
        }
    }

    /// Parameters and spectral-norm vectors as named blocks.
    pub fn export_state(&self, out: &mut StateBlocks<T>) {
        self.params.export(out);
        self.spectral.export(&self.params, out);
    }

    /// Loads parameters and spectral-norm vectors, consuming the blocks used.
    pub fn import_state(&mut self, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        self.params.import(blocks)?;
        self.spectral.import(&self.params, blocks)
    }

    /// One spectral-norm update (`sn_power_iters` power iterations) per weight.
    pub fn spectral_step(&mut self) {
        self.spectral.power_iterate(&self.params, self.cfg.sn_power_iters);
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), DiscriminatorError> {
        let received = InputShape::new(shape[1], shape[2], shape[3]);
        if received != self.input {
            return Err(DiscriminatorError::ShapeMismatch {
                expected: self.input,
                received,
            });
        }
        Ok(())
    }

    /// Full forward pass. Spectral-norm states are read, not advanced.
    pub fn forward<'g>(
        &self,
        images: Var<'g, T>,
        params: &Bound<'g, T>,
    ) -> Result<DisOutput<'g, T>, DiscriminatorError> {
        self.check_input(&images.shape())?;
        let ctx = Ctx::new(params, &self.spectral.states);
        match &self.arch {
            Arch::Stat(a) => {
                let feats = a.adapted_features(&ctx, &self.cfg, images);
                a.heads(&ctx, &self.cfg, &feats)
            }
            Arch::Patch(a) => Ok(a.forward(&ctx, &self.cfg, images)),
        }
    }

    /// Adapted feature maps `h_m(x)` for every scale (statistical variant only).
    pub fn adapted_features<'g>(
        &self,
        images: Var<'g, T>,
        params: &Bound<'g, T>,
    ) -> Result<Vec<Var<'g, T>>, DiscriminatorError> {
        self.check_input(&images.shape())?;
        let ctx = Ctx::new(params, &self.spectral.states);
        match &self.arch {
            Arch::Stat(a) => Ok(a.adapted_features(&ctx, &self.cfg, images)),
            Arch::Patch(_) => Err(DiscriminatorError::NotBaseline(self.cfg.variant)),
        }
    }

    /// Statistics and MLP heads applied to given adapted feature maps.
    pub fn heads_from_features<'g>(
        &self,
        features: &[Var<'g, T>],
        params: &Bound<'g, T>,
    ) -> Result<DisOutput<'g, T>, DiscriminatorError> {
        let ctx = Ctx::new(params, &self.spectral.states);
        match &self.arch {
            Arch::Stat(a) => a.heads(&ctx, &self.cfg, features),
            Arch::Patch(_) => Err(DiscriminatorError::NotBaseline(self.cfg.variant)),
        }
    }

    /// Inference on a batch of images.
    pub fn discriminate(&self, images: &ImageBatch<T>) -> Result<DisOutputGrid<T>, DiscriminatorError> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let out = self.forward(g.constant(images.to_dyn()), &bound)?;
        Ok(out.to_grid())
    }

    /// Per-head, per-patch inference outputs (`[N, patches]` per head).
    pub fn discriminate_patches(&self, images: &ImageBatch<T>) -> Result<Vec<(HeadLabel, Array2<T>)>, DiscriminatorError> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let out = self.forward(g.constant(images.to_dyn()), &bound)?;
        Ok(out
            .heads
            .iter()
            .map(|(l, v)| {
                let a = v.value().as_ref().clone().into_dimensionality().unwrap();
                (*l, a)
            })
            .collect())
    }
}
