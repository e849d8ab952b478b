//! Autonomous flow maps, the variational equation for the flow Jacobian,
//! and the stability integral that controls the action lower bound.
//!
//! The flow Jacobian `L(t)` solves `L' = f_*(phi_t(x)) L`, `L(0) = I`. Its
//! growth is controlled pointwise by Coppel's inequality
//! `||L(t)|| <= exp(int_0^t mu[f_*(phi_s(x))] ds)` where `mu` is the matrix
//! measure, and uniformly by `exp(M t)` for any `M` that dominates the
//! measure everywhere. [`coppel_check`] verifies both numerically.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::integrate::{cumulative_trapezoid_uniform, rk4_step_vec, rk4_step_vec_mat, trapezoid_uniform};
use crate::linalg::{all_finite_mat, all_finite_vec, matrix_measure, spectral_norm};

/// States (and optionally flow Jacobians) on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub jacobians: Option<Vec<DMatrix<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step_size(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is nonempty")
    }

    pub fn final_jacobian(&self) -> Option<&DMatrix<f64>> {
        self.jacobians.as_ref().map(|j| j.last().expect("trajectory is nonempty"))
    }

    /// Grid uniformity and initial-condition invariants; used by tests and
    /// the CSV exporter.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() || self.times.is_empty() {
            return Err(Error::Numeric("trajectory grid/state length mismatch".into()));
        }
        let h = self.step_size();
        let span = self.times.last().unwrap() - self.times[0];
        for (k, w) in self.times.windows(2).enumerate() {
            if ((w[1] - w[0]) - h).abs() > 1e-12 * span.abs().max(1.0) {
                return Err(Error::Numeric(format!("non-uniform grid at index {k}")));
            }
        }
        if let Some(jacs) = &self.jacobians {
            if jacs.len() != self.times.len() {
                return Err(Error::Numeric("trajectory jacobian length mismatch".into()));
            }
            let d = self.states[0].len();
            if (jacs[0].clone() - DMatrix::identity(d, d)).norm() > 1e-12 {
                return Err(Error::Numeric("variational equation must start from the identity".into()));
            }
        }
        Ok(())
    }
}

/// Integrate the autonomous flow `x' = f(x)` with fixed-step RK4.
///
/// The endpoint approximates `phi_T(x0)` with global error `O(h^4)`.
pub fn flow(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_horizon(horizon, steps, x0, sys)?;
    let h = horizon / steps as f64;
    let field = |x: &DVector<f64>| sys.drift(x);
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    times.push(0.0);
    let mut x = x0.clone();
    for k in 0..steps {
        x = rk4_step_vec(&field, &x, h);
        let t = (k + 1) as f64 * h;
        if !all_finite_vec(&x) {
            return Err(Error::Blowup { time: t });
        }
        states.push(x.clone());
        times.push(t);
    }
    Ok(Trajectory {
        times,
        states,
        jacobians: None,
    })
}

/// Integrate the flow together with the variational equation, so that the
/// final Jacobian approximates the flow sensitivity `(phi_T)_*(x0)`.
pub fn flow_jacobian(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_horizon(horizon, steps, x0, sys)?;
    let d = sys.dim();
    let h = horizon / steps as f64;
    let field = |x: &DVector<f64>, l: &DMatrix<f64>| (sys.drift(x), sys.drift_jacobian(x) * l);
    let mut states = Vec::with_capacity(steps + 1);
    let mut jacs = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut l = DMatrix::identity(d, d);
    states.push(x.clone());
    jacs.push(l.clone());
    times.push(0.0);
    for k in 0..steps {
        let (nx, nl) = rk4_step_vec_mat(&field, &x, &l, h);
        x = nx;
        l = nl;
        let t = (k + 1) as f64 * h;
        if !all_finite_vec(&x) || !all_finite_mat(&l) {
            return Err(Error::Blowup { time: t });
        }
        states.push(x.clone());
        jacs.push(l.clone());
        times.push(t);
    }
    Ok(Trajectory {
        times,
        states,
        jacobians: Some(jacs),
    })
}

fn check_horizon(
    horizon: f64,
    steps: usize,
    x0: &DVector<f64>,
    sys: &ControlAffineSystem,
) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("step count must be at least 1".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::InvalidParameter(format!(
            "initial state has dimension {}, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    Ok(())
}

/// How the supremum over initial points in the stability integral was
/// approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMethod {
    /// Maximum over a user-supplied probe set.
    SampledSup,
    /// Single trajectory from one initial point.
    AlongTrajectory,
}

impl StabilityMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SampledSup => "sampled-sup",
            Self::AlongTrajectory => "along-trajectory",
        }
    }
}

/// Numeric stability integral together with its closed-form counterparts.
///
/// `value` is a lower estimate of the true integral (the supremum is
/// restricted to probes); `closed_form_bound` is the certified upper side
/// whenever `measure_bound` dominates the drift-Jacobian measure globally.
#[derive(Debug, Clone)]
pub struct StabilityEstimate {
    /// Trapezoid value of the integral of the squared Jacobian norm.
    pub value: f64,
    /// `(e^{2MT} - 1) / (2M)` (limit `T` at `M = 0`): the bound that follows
    /// from Coppel's inequality. Tighter than `stated_form_bound`.
    pub closed_form_bound: f64,
    /// `e^{2 max(M,0) T} / (2|M|)` (limit `T` at `M = 0`): the looser
    /// displayed form, surfaced for comparison.
    pub stated_form_bound: f64,
    /// The measure bound `M` the closed forms were evaluated with. For
    /// `SampledSup`/`AlongTrajectory` this is the largest measure seen along
    /// the integrated trajectories, not a certified global bound.
    pub measure_bound: f64,
    pub method: StabilityMethod,
}

/// Closed-form stability bound `(e^{2MT} - 1) / (2M)`, continuous at
/// `M = 0` where it equals `T`.
pub fn stability_bound(measure_bound: f64, horizon: f64) -> f64 {
    if measure_bound == 0.0 {
        horizon
    } else {
        f64::exp_m1(2.0 * measure_bound * horizon) / (2.0 * measure_bound)
    }
}

/// The looser displayed form `e^{2 max(M,0) T} / (2|M|)`, with the `M = 0`
/// case equal to `T`.
pub fn stability_bound_stated(measure_bound: f64, horizon: f64) -> f64 {
    if measure_bound == 0.0 {
        horizon
    } else {
        (2.0 * measure_bound.max(0.0) * horizon).exp() / (2.0 * measure_bound.abs())
    }
}

/// Numeric stability integral: integrates (by the trapezoid rule on the RK4
/// grid) the maximum over probe points of the squared spectral norm of the
/// flow Jacobian. A lower estimate of the true integral.
pub fn stability_numeric(
    sys: &ControlAffineSystem,
    horizon: f64,
    probes: &[DVector<f64>],
    steps: usize,
) -> Result<StabilityEstimate> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("probe set must be nonempty".into()));
    }
    let mut sup_sq_norm = vec![f64::NEG_INFINITY; steps + 1];
    let mut measure_seen = f64::NEG_INFINITY;
    for probe in probes {
        let traj = flow_jacobian(sys, probe, horizon, steps)?;
        let jacs = traj.jacobians.as_ref().expect("jacobians present");
        for (k, (state, l)) in traj.states.iter().zip(jacs.iter()).enumerate() {
            let n = spectral_norm(l);
            sup_sq_norm[k] = sup_sq_norm[k].max(n * n);
            measure_seen = measure_seen.max(matrix_measure(&sys.drift_jacobian(state)));
        }
    }
    let h = horizon / steps as f64;
    let value = trapezoid_uniform(&sup_sq_norm, h);
    Ok(StabilityEstimate {
        value,
        closed_form_bound: stability_bound(measure_seen, horizon),
        stated_form_bound: stability_bound_stated(measure_seen, horizon),
        measure_bound: measure_seen,
        method: StabilityMethod::SampledSup,
    })
}

/// Single-probe stability integral along the trajectory from `x0`.
pub fn stability_along_trajectory(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    horizon: f64,
    steps: usize,
) -> Result<StabilityEstimate> {
    let mut est = stability_numeric(sys, horizon, std::slice::from_ref(x0), steps)?;
    est.method = StabilityMethod::AlongTrajectory;
    Ok(est)
}

/// Pointwise verification of Coppel's inequality along one trajectory.
#[derive(Debug, Clone)]
pub struct CoppelReport {
    /// Max over grid times of `||L(t)|| - exp(int_0^t mu ds)`; negative
    /// means the path-integral bound holds with slack everywhere.
    pub max_excess_path: f64,
    /// Max over grid times of `||L(t)|| - exp(M t)` for the supplied `M`.
    pub max_excess_uniform: f64,
    /// Same excesses relative to `max(1, bound)`.
    pub max_relative_excess_path: f64,
    pub max_relative_excess_uniform: f64,
}

/// Integrate the variational equation from `x0` and compare the Jacobian
/// norm against both sides of Coppel's inequality: the path integral of the
/// measure and the uniform bound `exp(measure_bound * t)`. Report-only.
pub fn coppel_check(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    horizon: f64,
    steps: usize,
    measure_bound: f64,
) -> Result<CoppelReport> {
    let traj = flow_jacobian(sys, x0, horizon, steps)?;
    let jacs = traj.jacobians.as_ref().expect("jacobians present");
    let measures: Vec<f64> = traj
        .states
        .iter()
        .map(|x| matrix_measure(&sys.drift_jacobian(x)))
        .collect();
    let h = horizon / steps as f64;
    let integral = cumulative_trapezoid_uniform(&measures, h);
    let mut report = CoppelReport {
        max_excess_path: f64::NEG_INFINITY,
        max_excess_uniform: f64::NEG_INFINITY,
        max_relative_excess_path: f64::NEG_INFINITY,
        max_relative_excess_uniform: f64::NEG_INFINITY,
    };
    for (k, l) in jacs.iter().enumerate() {
        let norm = spectral_norm(l);
        let path_bound = integral[k].exp();
        let uniform_bound = (measure_bound * traj.times[k]).exp();
        report.max_excess_path = report.max_excess_path.max(norm - path_bound);
        report.max_excess_uniform = report.max_excess_uniform.max(norm - uniform_bound);
        report.max_relative_excess_path = report
            .max_relative_excess_path
            .max((norm - path_bound) / path_bound.max(1.0));
        report.max_relative_excess_uniform = report
            .max_relative_excess_uniform
            .max((norm - uniform_bound) / uniform_bound.max(1.0));
    }
    Ok(report)
}
