//! Layers used by the generators, the discriminators and the toy embedder.

use std::collections::BTreeMap;

use autograd::{Real, Var};

use crate::params::{take_block, Bound, Initializer, ParamId, ParamKind, ParamStore, Scope, StateBlocks, StateError};
use crate::spectral::SpectralNormState;

pub const NORM_EPS: f64 = 1e-5;

/// Spectral-norm states owned by one network, indexed by layer.
#[derive(Debug, Clone, Default)]
pub struct SpectralRegistry<T: Real> {
    pub states: Vec<SpectralNormState<T>>,
    pub weights: Vec<ParamId>,
}

impl<T: Real> SpectralRegistry<T> {
    pub fn new() -> Self {
        Self {
            states: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn register(&mut self, weight: ParamId, store: &ParamStore<T>, init: &mut Initializer) -> usize {
        let state = SpectralNormState::new(&store.get(weight).value, init);
        self.states.push(state);
        self.weights.push(weight);
        self.states.len() - 1
    }

    /// Advances every state by `iters` power iterations on the current weights.
    pub fn power_iterate(&mut self, store: &ParamStore<T>, iters: usize) {
        for (state, &w) in self.states.iter_mut().zip(&self.weights) {
            for _ in 0..iters {
                state.power_iteration(&store.get(w).value);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// Stores `u` and `v` as `sn/<weight name>/u` and `.../v`.
    pub fn export(&self, store: &ParamStore<T>, out: &mut StateBlocks<T>) {
        for (state, &w) in self.states.iter().zip(&self.weights) {
            let name = &store.get(w).name;
            out.insert(format!("sn/{name}/u"), state.u.clone().into_dyn());
            out.insert(format!("sn/{name}/v"), state.v.clone().into_dyn());
        }
    }

    pub fn import(&mut self, store: &ParamStore<T>, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        for (state, &w) in self.states.iter_mut().zip(&self.weights) {
            let name = &store.get(w).name;
            let u = take_block(blocks, &format!("sn/{name}/u"), &[state.u.len()])?;
            let v = take_block(blocks, &format!("sn/{name}/v"), &[state.v.len()])?;
            state.u = u.into_dimensionality().unwrap();
            state.v = v.into_dimensionality().unwrap();
        }
        Ok(())
    }

    /// Power-iteration counts keyed by weight name.
    pub fn iteration_counts(&self, store: &ParamStore<T>) -> BTreeMap<String, u64> {
        self.states
            .iter()
            .zip(&self.weights)
            .map(|(s, &w)| (store.get(w).name.clone(), s.iterations))
            .collect()
    }

    pub fn set_iteration_counts(&mut self, store: &ParamStore<T>, counts: &BTreeMap<String, u64>) {
        for (s, &w) in self.states.iter_mut().zip(&self.weights) {
            if let Some(&n) = counts.get(&store.get(w).name) {
                s.iterations = n;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Everything a forward pass reads: bound parameters and spectral states.
pub struct Ctx<'a, 'g, T: Real> {
    pub params: &'a Bound<'g, T>,
    pub spectral: &'a [SpectralNormState<T>],
}

impl<'a, 'g, T: Real> Ctx<'a, 'g, T> {
    pub fn new(params: &'a Bound<'g, T>, spectral: &'a [SpectralNormState<T>]) -> Self {
        Self { params, spectral }
    }

    fn weight(&self, id: ParamId, spectral: Option<usize>) -> Var<'g, T> {
        let w = self.params.get(id);
        match spectral {
            Some(i) => self.spectral[i].apply(w),
            None => w,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub spectral: Option<usize>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        scope: &Scope,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            scope.param("weight"),
            ParamKind::Weight,
            init.normal(&[out_channels, in_channels, kernel, kernel]),
        );
        let bias = bias.then(|| {
            store.add(
                scope.param("bias"),
                ParamKind::Bias,
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])),
            )
        });
        Self {
            weight,
            bias,
            stride,
            padding,
            spectral: None,
        }
    }

    pub fn with_spectral<T: Real>(
        mut self,
        registry: &mut SpectralRegistry<T>,
        store: &ParamStore<T>,
        init: &mut Initializer,
    ) -> Self {
        self.spectral = Some(registry.register(self.weight, store, init));
        self
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = x.conv2d(ctx.weight(self.weight, self.spectral), self.stride, self.padding);
        match self.bias {
            Some(b) => y.add_channel_bias(ctx.params.get(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spectral: Option<usize>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        scope: &Scope,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let weight = store.add(
            scope.param("weight"),
            ParamKind::Weight,
            init.normal(&[out_features, in_features]),
        );
        let bias = store.add(
            scope.param("bias"),
            ParamKind::Bias,
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_features])),
        );
        Self {
            weight,
            bias,
            spectral: None,
        }
    }

    pub fn with_spectral<T: Real>(
        mut self,
        registry: &mut SpectralRegistry<T>,
        store: &ParamStore<T>,
        init: &mut Initializer,
    ) -> Self {
        self.spectral = Some(registry.register(self.weight, store, init));
        self
    }

    /// `x: [N, in]` → `[N, out]`.
    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.linear(
            ctx.weight(self.weight, self.spectral),
            Some(ctx.params.get(self.bias)),
        )
    }
}

/// Which axes a normalisation layer averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxes {
    /// Per sample and channel, over `H, W`.
    Instance,
    /// Per sample, over `C, H, W`.
    Layer,
}

/// Instance or layer normalisation with a per-channel affine transform.
#[derive(Debug, Clone)]
pub struct Norm2d {
    pub axes: NormAxes,
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, scope: &Scope, channels: usize, axes: NormAxes) -> Self {
        let gain = store.add(
            scope.param("gain"),
            ParamKind::NormGain,
            ndarray::ArrayD::ones(ndarray::IxDyn(&[channels])),
        );
        let bias = store.add(
            scope.param("bias"),
            ParamKind::NormBias,
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels])),
        );
        Self { axes, gain, bias }
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let axes: &[usize] = match self.axes {
            NormAxes::Instance => &[2, 3],
            NormAxes::Layer => &[1, 2, 3],
        };
        let centered = x.sub(x.mean_keepdim(axes));
        let var = centered.square().mean_keepdim(axes);
        let normed = centered.div(var.add_scalar(T::lit(NORM_EPS)).sqrt());
        let c = x.shape()[1];
        let gain = ctx.params.get(self.gain).reshape(&[1, c, 1, 1]);
        let bias = ctx.params.get(self.bias).reshape(&[1, c, 1, 1]);
        normed.mul(gain).add(bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Graph;
    use ndarray::{Array, IxDyn};

    #[test]
    fn instance_norm_standardises_each_plane() {
        let mut store = ParamStore::<f64>::new();
        let norm = Norm2d::new(&mut store, &Scope::root("n"), 2, NormAxes::Instance);
        let g = Graph::new();
        let bound = store.bind(&g, false);
        let ctx = Ctx::new(&bound, &[]);
        let x = Array::from_shape_fn(IxDyn(&[2, 2, 3, 3]), |d| (d[0] * 7 + d[1] * 3 + d[2] * d[3]) as f64);
        let y = norm.forward(&ctx, g.constant(x)).value();
        for n in 0..2 {
            for c in 0..2 {
                let plane: Vec<f64> = (0..9).map(|i| y[[n, c, i / 3, i % 3]]).collect();
                let mean = plane.iter().sum::<f64>() / 9.0;
                let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }
}
