use autograd::{Real, Var};

use super::{DisOutput, DiscriminatorConfig, DiscriminatorError, HeadLabel, InputShape};
use crate::feature_stats::{channel_statistic, StatKind};
use crate::nn::{Conv2d, Ctx, Linear, SpectralRegistry};
use crate::params::{Initializer, ParamStore, Scope};

#[derive(Clone)]
pub(super) struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, slope: f64, mut x: Var<'g, T>) -> Var<'g, T> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x);
            if i < last {
                x = x.leaky_relu(slope);
            }
        }
        x
    }
}

#[derive(Clone)]
pub(super) struct Scale {
    down: Conv2d,
    adapt: [Conv2d; 2],
    heads: Vec<(StatKind, Mlp)>,
}

#[derive(Clone)]
pub(super) struct StatArch {
    stem: [Conv2d; 2],
    scales: Vec<Scale>,
}

struct Builder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    spectral: &'a mut SpectralRegistry<T>,
    init: &'a mut Initializer,
    sn: bool,
}

impl<T: Real> Builder<'_, T> {
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, scope: Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let conv = Conv2d::new(self.store, self.init, &scope, cin, cout, k, stride, pad, true);
        if self.sn {
            conv.with_spectral(self.spectral, self.store, self.init)
        } else {
            conv
        }
    }

    fn linear(&mut self, scope: Scope, cin: usize, cout: usize) -> Linear {
        let fc = Linear::new(self.store, self.init, &scope, cin, cout);
        if self.sn {
            fc.with_spectral(self.spectral, self.store, self.init)
        } else {
            fc
        }
    }
}

impl StatArch {
    pub(super) fn build<T: Real>(
        cfg: &DiscriminatorConfig,
        input: InputShape,
        store: &mut ParamStore<T>,
        spectral: &mut SpectralRegistry<T>,
        init: &mut Initializer,
    ) -> Self {
        let mut b = Builder {
            store,
            spectral,
            init,
            sn: cfg.spectral_norm,
        };
        let root = Scope::root("disc");
        let base = cfg.base_channels;
        let stem = [
            b.conv(root.sub("stem").sub("conv1"), input.channels, base, 4, 2, 1),
            b.conv(root.sub("stem").sub("conv2"), base, base, 4, 2, 1),
        ];
        let mut scales = Vec::with_capacity(cfg.num_scales);
        let mut cin = base;
        for m in 1..=cfg.num_scales {
            let c = cfg.scale_channels(m);
            let scope = root.sub(format!("scale{m}"));
            let down = if m == 1 {
                b.conv(scope.sub("down"), cin, c, 3, 1, 1)
            } else {
                b.conv(scope.sub("down"), cin, c, 4, 2, 1)
            };
            let adapt = [
                b.conv(scope.sub("adapt1"), c, c, 1, 1, 0),
                b.conv(scope.sub("adapt2"), c, c, 1, 1, 0),
            ];
            let heads = cfg
                .enabled_stats
                .iter()
                .map(|&stat| {
                    let mlp_scope = root.sub("mlp").sub(stat.as_str()).sub(format!("scale{m}"));
                    let layers = (1..=cfg.mlp_layers)
                        .map(|k| {
                            let out = if k == cfg.mlp_layers { 1 } else { c };
                            b.linear(mlp_scope.sub(format!("fc{k}")), c, out)
                        })
                        .collect();
                    (stat, Mlp { layers })
                })
                .collect();
            scales.push(Scale { down, adapt, heads });
            cin = c;
        }
        Self { stem, scales }
    }

    pub(super) fn scale_sizes(&self, input: InputShape) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (input.height / 4, input.width / 4);
        (0..self.scales.len())
            .map(|m| {
                if m > 0 {
                    h /= 2;
                    w /= 2;
                }
                (h, w)
            })
            .collect()
    }

    pub(super) fn adapted_features<'g, T: Real>(
        &self,
        ctx: &Ctx<'_, 'g, T>,
        cfg: &DiscriminatorConfig,
        x: Var<'g, T>,
    ) -> Vec<Var<'g, T>> {
        let slope = cfg.leaky_slope;
        let mut h = x;
        for conv in &self.stem {
            h = conv.forward(ctx, h).leaky_relu(slope);
        }
        let mut out = Vec::with_capacity(self.scales.len());
        for scale in &self.scales {
            h = scale.down.forward(ctx, h).leaky_relu(slope);
            let mut a = h;
            for conv in &scale.adapt {
                a = conv.forward(ctx, a).leaky_relu(slope);
            }
            out.push(a);
        }
        out
    }

    pub(super) fn heads<'g, T: Real>(
        &self,
        ctx: &Ctx<'_, 'g, T>,
        cfg: &DiscriminatorConfig,
        features: &[Var<'g, T>],
    ) -> Result<DisOutput<'g, T>, DiscriminatorError> {
        if features.len() != self.scales.len() {
            return Err(DiscriminatorError::FeatureCount {
                expected: self.scales.len(),
                received: features.len(),
            });
        }
        let mut heads = Vec::new();
        for (m, (scale, &feat)) in self.scales.iter().zip(features).enumerate() {
            for (stat, mlp) in &scale.heads {
                let s = channel_statistic(feat, *stat, m + 1)?;
                let d = mlp.forward(ctx, cfg.leaky_slope, s);
                heads.push((HeadLabel::Stat { scale: m + 1, stat: *stat }, d));
            }
        }
        Ok(DisOutput { heads })
    }
}
