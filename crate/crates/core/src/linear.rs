//! Closed-form ground truth for linear systems: the controllability Gramian
//! `W(T) = int_0^T e^{sA} G G^T e^{sA^T} ds`, the exact minimum action
//! `(1/2) <r, W(T)^{-1} r>` with `r = y - e^{TA} x`, and the Gaussian
//! transition density with mean `e^{TA} x` and covariance `W(T)`.
//!
//! The Gramian is obtained in one integration pass from the Lyapunov
//! differential equation `W' = A W + W A^T + G G^T`, co-integrating the
//! state transition `Phi' = A Phi`, rather than by quadrature of matrix
//! exponentials.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LinearParams;
use crate::error::{Error, Result};
use crate::integrate::rk4_step_mat2;
use crate::linalg::{log_det_spd, solve_spd, spd_condition};

/// Condition number of `W(T)` above which action/density evaluations are
/// refused as numerically meaningless.
pub const GRAMIAN_CONDITION_LIMIT: f64 = 1e12;

/// Controllability Gramian and state transition at a fixed horizon.
#[derive(Debug, Clone)]
pub struct GramianResult {
    /// `W(T)`, symmetric positive definite for positive-definite `G G^T`.
    pub gramian: DMatrix<f64>,
    /// `e^{TA}`.
    pub state_transition: DMatrix<f64>,
    /// Eigenvalue condition number of `W(T)`.
    pub condition: f64,
    horizon: f64,
}

impl GramianResult {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check_condition(&self) -> Result<()> {
        if !self.condition.is_finite() || self.condition > GRAMIAN_CONDITION_LIMIT {
            return Err(Error::Singular(format!(
                "Gramian condition number {:.3e} exceeds {GRAMIAN_CONDITION_LIMIT:.0e}",
                self.condition
            )));
        }
        Ok(())
    }

    /// Residual `y - e^{TA} x` between the target and the free evolution.
    pub fn residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        y - &self.state_transition * x
    }

    /// Exact minimum action `(1/2) <r, W(T)^{-1} r>`.
    pub fn action(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_condition()?;
        let r = self.residual(x, y);
        let w_inv_r = solve_spd(&self.gramian, &r, "gramian action")?;
        Ok(0.5 * r.dot(&w_inv_r))
    }

    /// Log of the Gaussian transition density `N(y; e^{TA} x, W(T))`,
    /// normalized to integrate to one in `y`.
    pub fn log_density(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_condition()?;
        let d = self.gramian.nrows() as f64;
        let log_det = log_det_spd(&self.gramian, "gramian density")?;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det) - self.action(x, y)?)
    }

    /// Gaussian transition density `N(y; e^{TA} x, W(T))`.
    pub fn density(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(x, y)?.exp())
    }

    /// Minimum-energy steering control evaluated at time `t`:
    /// `u*(t) = G^T e^{(T-t) A^T} W(T)^{-1} (y - e^{TA} x)`.
    pub fn optimal_control(
        &self,
        params: &LinearParams,
        x: &DVector<f64>,
        y: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>> {
        self.check_condition()?;
        let r = self.residual(x, y);
        let w_inv_r = solve_spd(&self.gramian, &r, "gramian control")?;
        let horizon_left = self.horizon - t;
        let exp_at = matrix_exponential_transpose(&params.state_matrix, horizon_left);
        Ok(params.input_matrix.transpose() * exp_at * w_inv_r)
    }
}

/// Integrate the Lyapunov differential equation for `W` and the state
/// transition `Phi` with RK4 on a uniform grid; `W` is re-symmetrized every
/// step to suppress roundoff drift.
pub fn gramian(params: &LinearParams, horizon: f64, steps: usize) -> Result<GramianResult> {
    params.validate()?;
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::InvalidParameter(
            "gramian requires a positive horizon and at least one step".into(),
        ));
    }
    let d = params.dim();
    let a = &params.state_matrix;
    let ggt = &params.input_matrix * params.input_matrix.transpose();
    let h = horizon / steps as f64;
    let field = |w: &DMatrix<f64>, phi: &DMatrix<f64>| (a * w + w * a.transpose() + &ggt, a * phi);
    let mut w = DMatrix::zeros(d, d);
    let mut phi = DMatrix::identity(d, d);
    for _ in 0..steps {
        let (nw, nphi) = rk4_step_mat2(&field, &w, &phi, h);
        w = (&nw + nw.transpose()) * 0.5;
        phi = nphi;
    }
    if !crate::linalg::all_finite_mat(&w) || !crate::linalg::all_finite_mat(&phi) {
        return Err(Error::Blowup { time: horizon });
    }
    let condition = spd_condition(&w);
    Ok(GramianResult {
        gramian: w,
        state_transition: phi,
        condition,
        horizon,
    })
}

fn default_steps(horizon: f64) -> usize {
    ((1000.0 * horizon).ceil() as usize).max(1000)
}

/// Exact minimum action for a linear system, with integration resolution
/// chosen automatically (1000 steps per unit time, at least 1000).
pub fn exact_action(params: &LinearParams, x: &DVector<f64>, y: &DVector<f64>, horizon: f64) -> Result<f64> {
    gramian(params, horizon, default_steps(horizon))?.action(x, y)
}

/// Exact transition density for a linear system.
pub fn exact_density(params: &LinearParams, x: &DVector<f64>, y: &DVector<f64>, horizon: f64) -> Result<f64> {
    gramian(params, horizon, default_steps(horizon))?.density(x, y)
}

/// Exact log transition density for a linear system.
pub fn exact_log_density(
    params: &LinearParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
) -> Result<f64> {
    gramian(params, horizon, default_steps(horizon))?.log_density(x, y)
}

/// `e^{t A^T}` by scaling and squaring of a Taylor series; adequate for the
/// small, well-scaled matrices used here.
fn matrix_exponential_transpose(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let at = a.transpose() * t;
    let norm = at.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = &at / 2f64.powi(squarings as i32);
    let mut term = DMatrix::identity(d, d);
    let mut sum = DMatrix::identity(d, d);
    for k in 1..=16 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    let mut result = sum;
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}
