use autograd::{Real, Var};

use super::{DisOutput, DiscriminatorConfig, HeadLabel, InputShape, PATCHGAN_LEVELS};
use crate::nn::{Conv2d, Ctx, SpectralRegistry};
use crate::params::{Initializer, ParamStore, Scope};
use crate::resize::bilinear_matrix_as;

const STRIDED_CONVS: usize = 3;

#[derive(Clone)]
pub(super) struct PatchArch {
    levels: Vec<Vec<Conv2d>>,
}

impl PatchArch {
    pub(super) fn build<T: Real>(
        cfg: &DiscriminatorConfig,
        input: InputShape,
        store: &mut ParamStore<T>,
        spectral: &mut SpectralRegistry<T>,
        init: &mut Initializer,
    ) -> Self {
        let root = Scope::root("disc").sub("patch");
        let mut levels = Vec::with_capacity(PATCHGAN_LEVELS);
        for level in 1..=PATCHGAN_LEVELS {
            let scope = root.sub(format!("level{level}"));
            let mut convs = Vec::new();
            let mut cin = input.channels;
            for i in 0..STRIDED_CONVS {
                let cout = (cfg.base_channels << i).min(cfg.channel_cap);
                convs.push(Conv2d::new(store, init, &scope.sub(format!("conv{}", i + 1)), cin, cout, 4, 2, 1, true));
                cin = cout;
            }
            convs.push(Conv2d::new(store, init, &scope.sub("out"), cin, 1, 1, 1, 0, true));
            if cfg.spectral_norm {
                convs = convs
                    .into_iter()
                    .map(|c| c.with_spectral(spectral, store, init))
                    .collect();
            }
            levels.push(convs);
        }
        Self { levels }
    }

    pub(super) fn output_sizes(&self, input: InputShape) -> Vec<(usize, usize)> {
        (0..self.levels.len())
            .map(|k| {
                let f = 1 << (k + STRIDED_CONVS);
                (input.height / f, input.width / f)
            })
            .collect()
    }

    pub(super) fn forward<'g, T: Real>(
        &self,
        ctx: &Ctx<'_, 'g, T>,
        cfg: &DiscriminatorConfig,
        x: Var<'g, T>,
    ) -> DisOutput<'g, T> {
        let mut input = x;
        let mut heads = Vec::with_capacity(self.levels.len());
        for (k, convs) in self.levels.iter().enumerate() {
            if k > 0 {
                let shape = input.shape();
                let (h, w) = (shape[2], shape[3]);
                input = input.resample(&bilinear_matrix_as(h, h / 2), &bilinear_matrix_as(w, w / 2));
            }
            let last = convs.len() - 1;
            let mut h = input;
            for (i, conv) in convs.iter().enumerate() {
                h = conv.forward(ctx, h);
                if i < last {
                    h = h.leaky_relu(cfg.leaky_slope);
                }
            }
            let s = h.shape();
            let patches = h.reshape(&[s[0], s[2] * s[3]]);
            heads.push((HeadLabel::Patch { level: k + 1 }, patches));
        }
        DisOutput { heads }
    }
}
