//! Central finite differences, used to validate analytic gradients.
//!
//! This module only evaluates the function being checked; it never touches
//! the tape's backward pass.

use ndarray::Array2;

/// Relative error with a floor on the denominator so that gradients which
/// are zero analytically compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// Default step for [`central_differences`].
pub const STEP: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// `d f / d inputs` by the fourth-order central stencil with step `h`.
pub fn central_differences(
    inputs: &[Array2<f64>],
    mut f: impl FnMut(&[Array2<f64>]) -> f64,
    h: f64,
) -> Vec<Array2<f64>> {
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Array2::zeros(inputs[i].dim());
        for idx in 0..inputs[i].len() {
            let (r, c) = (idx / inputs[i].ncols(), idx % inputs[i].ncols());
            let x0 = work[i][[r, c]];
            let mut at = |d: f64| {
                work[i][[r, c]] = x0 + d;
                f(&work)
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            work[i][[r, c]] = x0;
            g[[r, c]] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between two gradient lists, with its location.
pub fn max_relative_error(
    analytic: &[Array2<f64>],
    numeric: &[Array2<f64>],
) -> (f64, Option<(usize, usize, usize)>) {
    let mut worst = (0.0, None);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.dim(), n.dim());
        for ((r, c), &av) in a.indexed_iter() {
            let e = relative_error(av, n[[r, c]]);
            if e > worst.0 || e.is_nan() {
                worst = (e, Some((i, r, c)));
            }
        }
    }
    worst
}
