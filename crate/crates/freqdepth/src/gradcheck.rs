//! Central-finite-difference gradient verification.
//!
//! The numeric side never touches the tape, so it stays an independent
//! oracle for every differentiable operation in the crate.

/// Central differences of a scalar function at `point`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2 h)` for each coordinate.
pub fn central_difference<F>(f: &F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Worst relative disagreement between two gradient vectors. Each entry is
/// normalized by `max(|a|, |b|, 1e-6)` so near-zero gradients are compared
/// on an absolute scale instead of blowing up the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
