//! Channel-wise statistics over the spatial positions of a feature map.
//!
//! Each statistic reduces one `H × W` plane per (sample, channel) to a single
//! value, so it is invariant to any permutation of spatial positions:
//!
//! * mean: `(1/HW) Σ x`
//! * max: `max x`; the gradient goes to the first maximal position in
//!   row-major order
//! * stddev: `sqrt((1/HW) Σ (x − mean)²)` (uncorrected); the backward pass uses
//!   `sqrt(var + 1e-8)` as denominator, so a constant plane gets gradient 0
//!
//! Statistics are always per sample, never pooled across the batch.

use std::fmt;
use std::str::FromStr;

use autograd::{Real, Var};
use ndarray::{Array2, Array4, ArrayD, Axis, Ix4};
use serde::{Deserialize, Serialize};

/// Added to the variance in the stddev backward pass only.
pub const STDDEV_GRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Mean,
    Max,
    Stddev,
}

impl StatKind {
    pub const ALL: [StatKind; 3] = [StatKind::Mean, StatKind::Max, StatKind::Stddev];

    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Max => "max",
            StatKind::Stddev => "stddev",
        }
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(StatKind::Mean),
            "max" => Ok(StatKind::Max),
            "stddev" | "std" => Ok(StatKind::Stddev),
            other => Err(format!("unknown statistic {other:?} (expected mean, max or stddev)")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("non-finite activation entering the {kind} statistic at scale {scale}")]
    NonFinite { scale: usize, kind: StatKind },
    #[error("feature map has an empty axis: {0:?}")]
    EmptyAxis([usize; 4]),
    #[error("expected a [batch, channels, height, width] feature map, got shape {0:?}")]
    Rank(Vec<usize>),
}

/// Activations of one backbone scale.
///
/// Logically `(batch, height, width, channels)`; stored channel-first as
/// `[batch, channels, height, width]` to match the convolution layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    data: Array4<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn from_nchw(data: Array4<T>) -> Result<Self, StatsError> {
        let (n, c, h, w) = data.dim();
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(StatsError::EmptyAxis([n, h, w, c]));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// From `(batch, height, width, channels)` order.
    pub fn from_nhwc(data: Array4<T>) -> Result<Self, StatsError> {
        Self::from_nchw(data.permuted_axes([0, 3, 1, 2]))
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn get(&self, sample: usize, y: usize, x: usize, channel: usize) -> T {
        self.data[[sample, channel, y, x]]
    }

    pub fn as_nchw(&self) -> &Array4<T> {
        &self.data
    }
}

/// One statistic of one sample at one scale; `values.len()` is the channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector<T: Real> {
    pub kind: StatKind,
    pub scale: usize,
    pub values: Vec<T>,
}

/// Summed in ascending order, relative to the smallest entry, so the result
/// is exactly invariant to spatial permutations and exact on constant planes.
fn plane_mean<T: Real>(plane: &[T]) -> T {
    let sorted = sorted(plane);
    let low = sorted[0];
    low + sorted.iter().map(|&v| v - low).sum::<T>() / T::lit(plane.len() as f64)
}

fn sorted<T: Real>(plane: &[T]) -> Vec<T> {
    let mut v = plane.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    v
}

/// Value and first row-major position of the maximum.
fn plane_argmax<T: Real>(plane: &[T]) -> (T, usize) {
    let mut best = (plane[0], 0);
    for (i, &v) in plane.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

fn plane_variance<T: Real>(plane: &[T], mean: T) -> T {
    let mut sq: Vec<T> = plane.iter().map(|&v| (v - mean) * (v - mean)).collect();
    sq.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    sq.into_iter().sum::<T>() / T::lit(plane.len() as f64)
}

fn reduce_plane<T: Real>(kind: StatKind, plane: &[T]) -> T {
    match kind {
        StatKind::Mean => plane_mean(plane),
        StatKind::Max => plane_argmax(plane).0,
        StatKind::Stddev => plane_variance(plane, plane_mean(plane)).sqrt(),
    }
}

/// Writes `∂stat/∂x · grad` for one plane into `dst`.
fn backprop_plane<T: Real>(kind: StatKind, plane: &[T], grad: T, dst: &mut [T]) {
    let n = T::lit(plane.len() as f64);
    match kind {
        StatKind::Mean => dst.fill(grad / n),
        StatKind::Max => {
            dst.fill(T::zero());
            dst[plane_argmax(plane).1] = grad;
        }
        StatKind::Stddev => {
            let mean = plane_mean(plane);
            let denom = n * (plane_variance(plane, mean) + T::lit(STDDEV_GRAD_EPS)).sqrt();
            for (d, &x) in dst.iter_mut().zip(plane) {
                *d = grad * (x - mean) / denom;
            }
        }
    }
}

fn check_finite<T: Real>(data: &Array4<T>, kind: StatKind, scale: usize) -> Result<(), StatsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite { scale, kind })
    }
}

/// `[N, C, H, W]` → `[N, C]`.
fn reduce_all<T: Real>(kind: StatKind, data: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = data.dim();
    let flat = data.as_slice().expect("standard layout");
    let plane = h * w;
    Array2::from_shape_fn((n, c), |(b, ch)| {
        let start = (b * c + ch) * plane;
        reduce_plane(kind, &flat[start..start + plane])
    })
}

fn statistic<T: Real>(fm: &FeatureMap<T>, kind: StatKind, scale: usize) -> Result<Vec<StatVector<T>>, StatsError> {
    check_finite(&fm.data, kind, scale)?;
    let out = reduce_all(kind, &fm.data);
    Ok(out
        .axis_iter(Axis(0))
        .map(|row| StatVector {
            kind,
            scale,
            values: row.to_vec(),
        })
        .collect())
}

/// Per-sample channel means.
pub fn channel_mean<T: Real>(fm: &FeatureMap<T>, scale: usize) -> Result<Vec<StatVector<T>>, StatsError> {
    statistic(fm, StatKind::Mean, scale)
}

/// Per-sample channel maxima.
pub fn channel_max<T: Real>(fm: &FeatureMap<T>, scale: usize) -> Result<Vec<StatVector<T>>, StatsError> {
    statistic(fm, StatKind::Max, scale)
}

/// Per-sample uncorrected channel standard deviations (divisor `H·W`).
pub fn channel_stddev<T: Real>(fm: &FeatureMap<T>, scale: usize) -> Result<Vec<StatVector<T>>, StatsError> {
    statistic(fm, StatKind::Stddev, scale)
}

/// Differentiable statistic of a `[N, C, H, W]` variable, giving `[N, C]`.
///
/// `scale` only labels errors.
pub fn channel_statistic<'g, T: Real>(
    x: Var<'g, T>,
    kind: StatKind,
    scale: usize,
) -> Result<Var<'g, T>, StatsError> {
    let value = x.value();
    let shape = value.shape().to_vec();
    let data = value
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| StatsError::Rank(shape.clone()))?
        .as_standard_layout()
        .into_owned();
    let (n, c, h, w) = data.dim();
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(StatsError::EmptyAxis([n, h, w, c]));
    }
    check_finite(&data, kind, scale)?;
    let out = reduce_all(kind, &data).into_dyn();
    Ok(x.graph().custom_op(&[x], out, move |grad, _| {
        let grad = grad.as_standard_layout();
        let gs = grad.as_slice().unwrap();
        let xs = data.as_slice().unwrap();
        let plane = h * w;
        let mut dx = vec![T::zero(); xs.len()];
        for (i, (dst, src)) in dx.chunks_mut(plane).zip(xs.chunks(plane)).enumerate() {
            backprop_plane(kind, src, gs[i], dst);
        }
        vec![Some(ArrayD::from_shape_vec(shape.clone(), dx).unwrap())]
    }))
}
