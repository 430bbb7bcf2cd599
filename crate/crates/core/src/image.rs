use autograd::Real;
use ndarray::{concatenate, Array4, ArrayD, Axis, Ix4};

/// Out-of-range excess below this is clamped silently.
pub const RANGE_TOLERANCE: f64 = 1e-3;
/// Out-of-range excess above this is rejected.
pub const RANGE_LIMIT: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ImageError {
    #[error("image batch has a zero-sized axis: {0:?}")]
    Empty([usize; 4]),
    #[error("image batch contains a non-finite value")]
    NonFinite,
    #[error("pixel value {value} is outside [-1, 1] by more than {RANGE_LIMIT}")]
    OutOfRange { value: f64 },
    #[error("expected a 4-axis [N, C, H, W] tensor, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("cannot concatenate batches of shapes {0:?} and {1:?}")]
    Concat([usize; 4], [usize; 4]),
}

/// A batch of images `[batch, channels, height, width]`, pixels in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T: Real> {
    data: Array4<T>,
}

impl<T: Real> ImageBatch<T> {
    /// Wraps `data`, rejecting empty axes and non-finite values.
    pub fn new(data: Array4<T>) -> Result<Self, ImageError> {
        let (n, c, h, w) = data.dim();
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(ImageError::Empty([n, c, h, w]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_dyn(data: ArrayD<T>) -> Result<Self, ImageError> {
        let shape = data.shape().to_vec();
        let data = data
            .into_dimensionality::<Ix4>()
            .map_err(|_| ImageError::Rank(shape))?;
        Self::new(data)
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self {
            data: Array4::from_elem((shape[0], shape[1], shape[2], shape[3]), value),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
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

    pub fn as_array(&self) -> &Array4<T> {
        &self.data
    }

    pub fn into_array(self) -> Array4<T> {
        self.data
    }

    pub fn to_dyn(&self) -> ArrayD<T> {
        self.data.clone().into_dyn()
    }

    pub fn cast<U: Real>(&self) -> ImageBatch<U> {
        ImageBatch {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
        }
    }

    /// Largest distance of any pixel outside `[-1, 1]` (0 when in range).
    pub fn range_excess(&self) -> f64 {
        self.data
            .iter()
            .map(|v| (v.as_f64().abs() - 1.0).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Clamps into `[-1, 1]`: silently up to [`RANGE_TOLERANCE`], with a
    /// warning up to [`RANGE_LIMIT`], and errors beyond that.
    pub fn sanitized(mut self) -> Result<Self, ImageError> {
        let excess = self.range_excess();
        if excess == 0.0 {
            return Ok(self);
        }
        if excess > RANGE_LIMIT {
            let value = self
                .data
                .iter()
                .map(|v| v.as_f64())
                .fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { v } else { acc });
            return Err(ImageError::OutOfRange { value });
        }
        if excess > RANGE_TOLERANCE {
            log::warn!("clamping pixel values that exceed [-1, 1] by up to {excess:.4}");
        }
        self.data.mapv_inplace(|v| v.max(-T::one()).min(T::one()));
        Ok(self)
    }

    /// Concatenates along the batch axis.
    pub fn concat(parts: &[&ImageBatch<T>]) -> Result<Self, ImageError> {
        let first = parts[0].shape();
        for p in parts {
            let s = p.shape();
            if s[1..] != first[1..] {
                return Err(ImageError::Concat(first, s));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        Ok(Self {
            data: concatenate(Axis(0), &views).unwrap(),
        })
    }

    /// Samples `start..start + len` of the batch.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            data: self
                .data
                .slice_axis(Axis(0), ndarray::Slice::from(start..start + len))
                .to_owned(),
        }
    }
}
