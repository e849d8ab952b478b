//! Fixed-step classical RK4 steppers for the handful of state shapes used in
//! this crate: vectors, vector/matrix pairs (state + variational equation),
//! and matrix pairs (Gramian + state transition).

use nalgebra::{DMatrix, DVector};

pub(crate) fn rk4_step_vec<F>(f: &F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub(crate) fn rk4_step_vec_mat<F>(
    f: &F,
    x: &DVector<f64>,
    m: &DMatrix<f64>,
    h: f64,
) -> (DVector<f64>, DMatrix<f64>)
where
    F: Fn(&DVector<f64>, &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let (kx1, km1) = f(x, m);
    let (kx2, km2) = f(&(x + &kx1 * (h / 2.0)), &(m + &km1 * (h / 2.0)));
    let (kx3, km3) = f(&(x + &kx2 * (h / 2.0)), &(m + &km2 * (h / 2.0)));
    let (kx4, km4) = f(&(x + &kx3 * h), &(m + &km3 * h));
    (
        x + (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (h / 6.0),
        m + (km1 + km2 * 2.0 + km3 * 2.0 + km4) * (h / 6.0),
    )
}

pub(crate) fn rk4_step_mat2<F>(
    f: &F,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>)
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>),
{
    let (ka1, kb1) = f(a, b);
    let (ka2, kb2) = f(&(a + &ka1 * (h / 2.0)), &(b + &kb1 * (h / 2.0)));
    let (ka3, kb3) = f(&(a + &ka2 * (h / 2.0)), &(b + &kb2 * (h / 2.0)));
    let (ka4, kb4) = f(&(a + &ka3 * h), &(b + &kb3 * h));
    (
        a + (ka1 + ka2 * 2.0 + ka3 * 2.0 + ka4) * (h / 6.0),
        b + (kb1 + kb2 * 2.0 + kb3 * 2.0 + kb4) * (h / 6.0),
    )
}

/// Composite trapezoid rule on a uniform grid.
pub(crate) fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * (values[0] + values[values.len() - 1]) + interior)
}

/// Cumulative trapezoid integral on a uniform grid; output[k] approximates
/// the integral from the start of the grid to grid point k.
pub(crate) fn cumulative_trapezoid_uniform(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_scalar_decay_fourth_order() {
        // x' = -x, x(0) = 1; compare against exp(-1) at two resolutions.
        let f = |x: &DVector<f64>| -x;
        let run = |steps: usize| {
            let mut x = DVector::from_row_slice(&[1.0]);
            let h = 1.0 / steps as f64;
            for _ in 0..steps {
                x = rk4_step_vec(&f, &x, h);
            }
            x[0]
        };
        let e10 = (run(10) - (-1.0f64).exp()).abs();
        let e20 = (run(20) - (-1.0f64).exp()).abs();
        assert!(e20 < e10 / 12.0, "expected ~16x error reduction, got {e10} -> {e20}");
    }

    #[test]
    fn trapezoid_linear_is_exact() {
        let vals: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        assert_relative_eq!(trapezoid_uniform(&vals, 0.1), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_trapezoid_endpoint_matches_total() {
        let vals: Vec<f64> = (0..=50).map(|i| (i as f64 * 0.1).sin()).collect();
        let cum = cumulative_trapezoid_uniform(&vals, 0.1);
        assert_relative_eq!(cum[50], trapezoid_uniform(&vals, 0.1), epsilon = 1e-13);
        assert_eq!(cum[0], 0.0);
    }
}
