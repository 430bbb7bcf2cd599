//! Central finite differences for checking backward rules.

use ndarray::ArrayD;

/// Central-difference estimate of `∂f/∂x[i]` for each flat index in `indices`.
pub fn numeric_gradient<F>(f: F, x: &ArrayD<f64>, indices: &[usize], eps: f64) -> Vec<f64>
where
    F: Fn(&ArrayD<f64>) -> f64,
{
    let mut probe = x.as_standard_layout().into_owned();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.as_slice().unwrap()[i];
            probe.as_slice_mut().unwrap()[i] = orig + eps;
            let up = f(&probe);
            probe.as_slice_mut().unwrap()[i] = orig - eps;
            let down = f(&probe);
            probe.as_slice_mut().unwrap()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
