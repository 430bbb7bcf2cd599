//! Spectral normalisation with a persisted power-iteration estimate.
//!
//! A weight of any rank is viewed as a matrix `[out, rest]`. The state keeps
//! unit vectors `u` (left) and `v` (right); one update is
//! `v ← Wᵀu / ‖Wᵀu‖`, `u ← Wv / ‖Wv‖`, and the normalised weight is
//! `W / σ̂` with `σ̂ = uᵀ W v`.

use autograd::{Real, Var};
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Ix2};

use crate::params::Initializer;

/// Lower clamp on `σ̂`; an all-zero weight normalises to zeros.
pub const SIGMA_FLOOR: f64 = 1e-12;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormState<T: Real> {
    pub u: Array1<T>,
    pub v: Array1<T>,
    pub iterations: u64,
}

fn as_matrix<T: Real>(weight: &ArrayD<T>) -> ArrayView2<'_, T> {
    let rows = weight.shape()[0];
    let cols = weight.len() / rows.max(1);
    weight
        .view()
        .into_shape_with_order((rows, cols))
        .expect("weight must be contiguous")
        .into_dimensionality::<Ix2>()
        .unwrap()
}

fn normalized<T: Real>(x: Array1<T>) -> Array1<T> {
    let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    let norm = norm.max(T::lit(NORM_FLOOR));
    x.mapv(|v| v / norm)
}

impl<T: Real> SpectralNormState<T> {
    /// Random unit `u`, and `v` consistent with it.
    pub fn new(weight: &ArrayD<T>, init: &mut Initializer) -> Self {
        let w = as_matrix(weight);
        let u = normalized(Array1::from(init.standard_normal::<T>(w.nrows())));
        let v = normalized(w.t().dot(&u));
        Self { u, v, iterations: 0 }
    }

    /// One power-iteration update against the current weight.
    pub fn power_iteration(&mut self, weight: &ArrayD<T>) {
        let w = as_matrix(weight);
        let v = normalized(w.t().dot(&self.u));
        let u = normalized(w.dot(&v));
        self.u = u;
        self.v = v;
        self.iterations += 1;
    }

    /// `σ̂ = uᵀ W v` for the stored vectors.
    pub fn sigma(&self, weight: &ArrayD<T>) -> T {
        self.u.dot(&as_matrix(weight).dot(&self.v))
    }

    /// `u vᵀ` reshaped like `weight`; the gradient of `σ̂` w.r.t. the weight.
    fn outer(&self, weight_shape: &[usize]) -> ArrayD<T> {
        let u = self.u.view().insert_axis(ndarray::Axis(1));
        let v = self.v.view().insert_axis(ndarray::Axis(0));
        let outer: Array2<T> = &u * &v;
        outer
            .into_shape_with_order(ndarray::IxDyn(weight_shape))
            .expect("spectral state does not match weight shape")
    }

    /// Normalised weight on a graph, with gradient through `σ̂` and the stored
    /// vectors held constant. Does not advance the state.
    pub fn apply<'g>(&self, weight: Var<'g, T>) -> Var<'g, T> {
        let shape = weight.shape();
        let sigma = weight.mul_const(&self.outer(&shape)).sum_all();
        if sigma.item() < T::lit(SIGMA_FLOOR) {
            return weight.mul_scalar(T::one() / T::lit(SIGMA_FLOOR));
        }
        weight.div(sigma)
    }
}

/// One power-iteration update followed by `W / σ̂`.
pub fn spectral_normalize<T: Real>(weight: &ArrayD<T>, state: &mut SpectralNormState<T>) -> ArrayD<T> {
    state.power_iteration(weight);
    let sigma = state.sigma(weight).max(T::lit(SIGMA_FLOOR));
    weight.mapv(|v| v / sigma)
}
