//! Forward generator `G` (full resolution) and backward generator `B`
//! (operating at 1/8 resolution), plus the bilinear reduction `u` between them.

use autograd::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::image::{ImageBatch, ImageError};
use crate::nn::{Conv2d, Ctx, NormAxes, Norm2d};
use crate::params::{Bound, Initializer, ParamStore, Scope, StateBlocks, StateError};
use crate::resize::bilinear_matrix_as;

/// Reduction factor of the weak-cycle path.
pub const LOW_RES_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    Instance,
    Layer,
}

impl ResidualNorm {
    fn axes(self) -> NormAxes {
        match self {
            ResidualNorm::Instance => NormAxes::Instance,
            ResidualNorm::Layer => NormAxes::Layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Channels of the first convolution; doubled by every downsampling step.
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub downsample_steps: usize,
    pub image_channels: usize,
    /// Normalisation inside the backward generator's residual blocks.
    pub backward_norm: ResidualNorm,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            num_residual_blocks: 6,
            downsample_steps: 3,
            image_channels: 3,
            backward_norm: ResidualNorm::Instance,
        }
    }
}

impl GeneratorConfig {
    /// Channels inside the residual trunk.
    pub fn trunk_channels(&self) -> usize {
        self.base_channels << self.downsample_steps
    }

    fn validate(&self, height: usize, width: usize) -> Result<(), GeneratorError> {
        if 1 << self.downsample_steps != LOW_RES_FACTOR {
            return Err(GeneratorError::Config(format!(
                "downsample_steps must be 3 so the residual trunk runs at 1/{LOW_RES_FACTOR} resolution, got {}",
                self.downsample_steps
            )));
        }
        if self.base_channels == 0 || self.image_channels == 0 {
            return Err(GeneratorError::Config("channel counts must be positive".into()));
        }
        if height == 0 || width == 0 || height % LOW_RES_FACTOR != 0 || width % LOW_RES_FACTOR != 0 {
            return Err(GeneratorError::Indivisible { height, width });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("image size {height}x{width} is not divisible by {LOW_RES_FACTOR}")]
    Indivisible { height: usize, width: usize },
    #[error("expected {expected:?} (channels, height, width), received {received:?}")]
    Resolution {
        expected: (usize, usize, usize),
        received: (usize, usize, usize),
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: Norm2d,
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        scope: &Scope,
        cin: usize,
        cout: usize,
        stride: usize,
        axes: NormAxes,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, init, &scope.sub("conv"), cin, cout, 3, stride, 1, false),
            norm: Norm2d::new(store, &scope.sub("norm"), cout, axes),
        }
    }

    fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.norm.forward(ctx, self.conv.forward(ctx, x))
    }
}

#[derive(Clone)]
struct ResBlock {
    first: ConvNorm,
    second: ConvNorm,
}

impl ResBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Initializer, scope: &Scope, c: usize, axes: NormAxes) -> Self {
        Self {
            first: ConvNorm::new(store, init, &scope.sub("a"), c, c, 1, axes),
            second: ConvNorm::new(store, init, &scope.sub("b"), c, c, 1, axes),
        }
    }

    fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let h = self.first.forward(ctx, x).relu();
        x.add(self.second.forward(ctx, h))
    }
}

fn output_conv<T: Real>(store: &mut ParamStore<T>, init: &mut Initializer, scope: &Scope, cin: usize, cout: usize) -> Conv2d {
    Conv2d::new(store, init, &scope.sub("out"), cin, cout, 3, 1, 1, true)
}

fn check_shape(expected: (usize, usize, usize), shape: &[usize]) -> Result<(), GeneratorError> {
    let received = (shape[1], shape[2], shape[3]);
    if received != expected {
        return Err(GeneratorError::Resolution { expected, received });
    }
    Ok(())
}

/// Full-resolution translator: 3×3 convolutions throughout; instance norm in
/// the downsampling and residual parts, layer norm in the upsampling part.
#[derive(Clone)]
pub struct ForwardGenerator<T: Real> {
    cfg: GeneratorConfig,
    shape: (usize, usize, usize),
    params: ParamStore<T>,
    stem: ConvNorm,
    down: Vec<ConvNorm>,
    res: Vec<ResBlock>,
    up: Vec<ConvNorm>,
    out: Conv2d,
}

impl<T: Real> ForwardGenerator<T> {
    pub fn new(cfg: &GeneratorConfig, height: usize, width: usize, seed: u64) -> Result<Self, GeneratorError> {
        cfg.validate(height, width)?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let root = Scope::root("gen_fwd");
        let base = cfg.base_channels;
        let stem = ConvNorm::new(&mut params, &mut init, &root.sub("stem"), cfg.image_channels, base, 1, NormAxes::Instance);
        let mut c = base;
        let mut down = Vec::new();
        for i in 1..=cfg.downsample_steps {
            down.push(ConvNorm::new(&mut params, &mut init, &root.sub(format!("down{i}")), c, c * 2, 2, NormAxes::Instance));
            c *= 2;
        }
        let res = (1..=cfg.num_residual_blocks)
            .map(|i| ResBlock::new(&mut params, &mut init, &root.sub(format!("res{i}")), c, NormAxes::Instance))
            .collect();
        let mut up = Vec::new();
        for i in 1..=cfg.downsample_steps {
            up.push(ConvNorm::new(&mut params, &mut init, &root.sub(format!("up{i}")), c, c / 2, 1, NormAxes::Layer));
            c /= 2;
        }
        let out = output_conv(&mut params, &mut init, &root, c, cfg.image_channels);
        Ok(Self {
            cfg: cfg.clone(),
            shape: (cfg.image_channels, height, width),
            params,
            stem,
            down,
            res,
            up,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// `(channels, height, width)` fixed at build time.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    /// Spatial size at which the residual blocks run.
    pub fn trunk_size(&self) -> (usize, usize) {
        let f = 1 << self.down.len();
        (self.shape.1 / f, self.shape.2 / f)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn export_state(&self, out: &mut StateBlocks<T>) {
        self.params.export(out);
    }

    pub fn import_state(&mut self, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        self.params.import(blocks)
    }

    pub fn forward<'g>(&self, x: Var<'g, T>, params: &Bound<'g, T>) -> Result<Var<'g, T>, GeneratorError> {
        check_shape(self.shape, &x.shape())?;
        let ctx = Ctx::new(params, &[]);
        let mut h = self.stem.forward(&ctx, x).relu();
        for block in &self.down {
            h = block.forward(&ctx, h).relu();
        }
        for block in &self.res {
            h = block.forward(&ctx, h);
        }
        for block in &self.up {
            h = block.forward(&ctx, h.upsample_nearest2x()).relu();
        }
        Ok(self.out.forward(&ctx, h).tanh())
    }

    /// `G(x)` for a batch; inputs slightly outside `[-1, 1]` are clamped.
    pub fn translate(&self, x: &ImageBatch<T>) -> Result<ImageBatch<T>, GeneratorError> {
        let x = x.clone().sanitized()?;
        let g = Graph::new();
        let y = self.forward(g.constant(x.to_dyn()), &self.params.bind(&g, false))?;
        Ok(ImageBatch::from_dyn(y.value().as_ref().clone())?)
    }
}

/// Low-resolution reconstructor: the same residual blocks as the forward
/// generator, with no resampling layers.
#[derive(Clone)]
pub struct BackwardGenerator<T: Real> {
    cfg: GeneratorConfig,
    shape: (usize, usize, usize),
    params: ParamStore<T>,
    stem: ConvNorm,
    res: Vec<ResBlock>,
    out: Conv2d,
}

impl<T: Real> BackwardGenerator<T> {
    /// `height` and `width` are the full-resolution sizes.
    pub fn new(cfg: &GeneratorConfig, height: usize, width: usize, seed: u64) -> Result<Self, GeneratorError> {
        cfg.validate(height, width)?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let root = Scope::root("gen_bwd");
        let c = cfg.trunk_channels();
        let axes = cfg.backward_norm.axes();
        let stem = ConvNorm::new(&mut params, &mut init, &root.sub("stem"), cfg.image_channels, c, 1, axes);
        let res = (1..=cfg.num_residual_blocks)
            .map(|i| ResBlock::new(&mut params, &mut init, &root.sub(format!("res{i}")), c, axes))
            .collect();
        let out = output_conv(&mut params, &mut init, &root, c, cfg.image_channels);
        Ok(Self {
            cfg: cfg.clone(),
            shape: (cfg.image_channels, height / LOW_RES_FACTOR, width / LOW_RES_FACTOR),
            params,
            stem,
            res,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Low-resolution `(channels, height, width)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn export_state(&self, out: &mut StateBlocks<T>) {
        self.params.export(out);
    }

    pub fn import_state(&mut self, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        self.params.import(blocks)
    }

    pub fn forward<'g>(&self, x: Var<'g, T>, params: &Bound<'g, T>) -> Result<Var<'g, T>, GeneratorError> {
        check_shape(self.shape, &x.shape())?;
        let ctx = Ctx::new(params, &[]);
        let mut h = self.stem.forward(&ctx, x).relu();
        for block in &self.res {
            h = block.forward(&ctx, h);
        }
        Ok(self.out.forward(&ctx, h).tanh())
    }

    /// `B(y)` for a low-resolution batch.
    pub fn reconstruct_low(&self, y: &ImageBatch<T>) -> Result<ImageBatch<T>, GeneratorError> {
        let g = Graph::new();
        let out = self.forward(g.constant(y.to_dyn()), &self.params.bind(&g, false))?;
        Ok(ImageBatch::from_dyn(out.value().as_ref().clone())?)
    }
}

/// Bilinear 8× reduction of a `[N, C, H, W]` variable.
pub fn downscale_var<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>, GeneratorError> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    if h % LOW_RES_FACTOR != 0 || w % LOW_RES_FACTOR != 0 || h == 0 || w == 0 {
        return Err(GeneratorError::Indivisible { height: h, width: w });
    }
    let rows = bilinear_matrix_as(h, h / LOW_RES_FACTOR);
    let cols = bilinear_matrix_as(w, w / LOW_RES_FACTOR);
    Ok(x.resample(&rows, &cols))
}

/// `u(x)`: bilinear reduction by exactly 8× per axis.
pub fn downscale_u<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>, GeneratorError> {
    let g = Graph::new();
    let y = downscale_var(g.constant(x.to_dyn()))?;
    Ok(ImageBatch::from_dyn(y.value().as_ref().clone())?)
}
