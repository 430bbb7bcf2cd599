//! Bilinear resampling with half-pixel centres and no corner alignment.
//!
//! Output sample `i` reads the input at `(i + 0.5) · in / out − 0.5`, clamped
//! to the valid range, and interpolates its two neighbours. For an exact 8×
//! reduction this reads input positions `8i + 3` and `8i + 4` with weight ½.

use autograd::Real;
use ndarray::{Array2, Array3, Axis};

/// `[out_len, in_len]` matrix whose rows are bilinear sampling weights.
pub fn bilinear_matrix(in_len: usize, out_len: usize) -> Array2<f64> {
    assert!(in_len > 0 && out_len > 0);
    let mut m = Array2::zeros((out_len, in_len));
    let scale = in_len as f64 / out_len as f64;
    for i in 0..out_len {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        let frac = src - lo as f64;
        m[[i, lo]] += 1.0 - frac;
        m[[i, hi]] += frac;
    }
    m
}

pub fn bilinear_matrix_as<T: Real>(in_len: usize, out_len: usize) -> Array2<T> {
    bilinear_matrix(in_len, out_len).mapv(T::lit)
}

/// Resizes every plane of a `[C, H, W]` image.
pub fn resize_planes(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let rows = bilinear_matrix_as::<f32>(h, out_h);
    let cols = bilinear_matrix_as::<f32>(w, out_w);
    let mut out = Array3::zeros((c, out_h, out_w));
    for (plane, mut dst) in img.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        dst.assign(&rows.dot(&plane).dot(&cols.t()));
    }
    out
}
