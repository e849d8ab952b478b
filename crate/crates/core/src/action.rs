//! Two-point minimum-action steering by direct transcription.
//!
//! The decision variable is a piecewise-constant control on a uniform
//! partition of `[0, T]`; the steering constraint is handled by quadratic
//! penalty continuation. Gradients of the penalized objective come from the
//! discrete adjoint of the RK4 rollout, so they differentiate the
//! transcribed problem exactly (up to the accuracy of the stage Jacobians).
//!
//! Every solve is packaged as an [`ActionCertificate`] carrying the numeric
//! action value together with the feedback-linearization upper bound and the
//! stability-integral lower bound. The numeric value is the best local
//! minimum found, hence an upper estimate of the true minimum action; the
//! lower bound is certified only when a global measure bound for the drift
//! Jacobian is supplied.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::flow::{flow, stability_along_trajectory, stability_bound, Trajectory};
use crate::integrate::rk4_step_vec;
use crate::linalg::all_finite_vec;
use crate::mc::derive_seed;

/// Piecewise-constant control on a uniform partition of `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    horizon: f64,
    values: Vec<DVector<f64>>,
}

impl ControlGrid {
    pub fn new(horizon: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "control horizon must be positive, got {horizon}"
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter("control grid needs at least one interval".into()));
        }
        if values.iter().any(|u| !all_finite_vec(u)) {
            return Err(Error::InvalidParameter("control values must be finite".into()));
        }
        Ok(Self { horizon, values })
    }

    /// Constant control on `intervals` intervals.
    pub fn constant(horizon: f64, intervals: usize, value: DVector<f64>) -> Result<Self> {
        Self::new(horizon, vec![value; intervals])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn interval_width(&self) -> f64 {
        self.horizon / self.values.len() as f64
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Control value active at time `t` (clamped to the last interval at
    /// `t >= horizon`).
    pub fn value_at(&self, t: f64) -> &DVector<f64> {
        let idx = ((t / self.interval_width()) as usize).min(self.values.len() - 1);
        &self.values[idx]
    }

    /// Quadratic control cost `(1/2) sum |u_k|^2 dt`.
    pub fn cost(&self) -> f64 {
        0.5 * self.interval_width() * self.values.iter().map(|u| u.norm_squared()).sum::<f64>()
    }

    /// Split every interval in two, keeping the same control values; the
    /// refined grid represents the identical control signal.
    pub fn refine_double(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len() * 2);
        for u in &self.values {
            values.push(u.clone());
            values.push(u.clone());
        }
        Self {
            horizon: self.horizon,
            values,
        }
    }
}

/// Feedback-linearization steering control along the straight line from `x`
/// to `y`: `u_k = g(p_k)^{-1} ((y - x)/T - f(p_k))` with `p_k` the line point
/// at the left endpoint of interval `k`.
pub fn feedback_linearization_control(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
    intervals: usize,
) -> Result<ControlGrid> {
    check_problem(sys, x, y, horizon)?;
    if intervals == 0 {
        return Err(Error::InvalidParameter("need at least one control interval".into()));
    }
    let velocity = (y - x) / horizon;
    let dt = horizon / intervals as f64;
    let mut values = Vec::with_capacity(intervals);
    for k in 0..intervals {
        let t = k as f64 * dt;
        let p = x + (y - x) * (t / horizon);
        let g = sys.diffusion(&p);
        let rhs = &velocity - sys.drift(&p);
        let u = g.lu().solve(&rhs).ok_or_else(|| {
            Error::Singular(format!("diffusion matrix singular on the steering line at t = {t}"))
        })?;
        values.push(u);
    }
    ControlGrid::new(horizon, values)
}

/// Upper bound on the minimum action: composite-Simpson quadrature of
/// `|(y - x)/T - f(x + (t/T)(y - x))|^2 / (2 lambda_min)` over `[0, T]`.
pub fn action_upper_bound(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
    quad_points: usize,
) -> Result<f64> {
    check_problem(sys, x, y, horizon)?;
    if quad_points < 2 {
        return Err(Error::InvalidParameter("Simpson quadrature needs at least 2 intervals".into()));
    }
    let n = quad_points + quad_points % 2;
    let h = horizon / n as f64;
    let velocity = (y - x) / horizon;
    let integrand = |t: f64| {
        let p = x + (y - x) * (t / horizon);
        (&velocity - sys.drift(&p)).norm_squared()
    };
    let mut total = integrand(0.0) + integrand(horizon);
    for k in 1..n {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * integrand(k as f64 * h);
    }
    Ok(total * h / 3.0 / (2.0 * sys.lambda_min()))
}

/// Lower bound on the minimum action: `|y - phi_T(x)|^2 / (2 lambda_max s)`
/// where `s` must be an upper bound on the stability integral for the bound
/// to be valid.
pub fn action_lower_bound(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
    stability: f64,
    flow_steps: usize,
) -> Result<f64> {
    check_problem(sys, x, y, horizon)?;
    if !(stability > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stability value must be positive, got {stability}"
        )));
    }
    let endpoint = flow(sys, x, horizon, flow_steps)?.final_state().clone();
    Ok((y - endpoint).norm_squared() / (2.0 * sys.lambda_max() * stability))
}

/// RK4 rollout of the controlled system `x' = f(x) + g(x) u(t)` with `u`
/// held constant on each grid interval.
pub fn rollout(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    control: &ControlGrid,
    steps_per_interval: usize,
) -> Result<Trajectory> {
    if steps_per_interval == 0 {
        return Err(Error::InvalidParameter("steps_per_interval must be at least 1".into()));
    }
    if x.len() != sys.dim() {
        return Err(Error::InvalidParameter("initial state dimension mismatch".into()));
    }
    let states = rollout_states(sys, x, control.values(), control.horizon(), steps_per_interval)?;
    let n = states.len();
    let h = control.horizon() / (n - 1) as f64;
    Ok(Trajectory {
        times: (0..n).map(|k| k as f64 * h).collect(),
        states,
        jacobians: None,
    })
}

fn rollout_states(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    horizon: f64,
    steps_per_interval: usize,
) -> Result<Vec<DVector<f64>>> {
    let dt = horizon / (controls.len() * steps_per_interval) as f64;
    let mut states = Vec::with_capacity(controls.len() * steps_per_interval + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for (k, u) in controls.iter().enumerate() {
        let field = |p: &DVector<f64>| sys.controlled_field(p, u);
        for s in 0..steps_per_interval {
            x = rk4_step_vec(&field, &x, dt);
            if !all_finite_vec(&x) {
                let t = (k * steps_per_interval + s + 1) as f64 * dt;
                return Err(Error::Blowup { time: t });
            }
            states.push(x.clone());
        }
    }
    Ok(states)
}

/// Penalized objective `J = (1/2) sum |u_k|^2 dt + (rho/2) |x_u(T) - y|^2`
/// and its gradient in the control values, via the discrete adjoint of the
/// RK4 rollout.
pub fn penalty_objective_gradient(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    control: &ControlGrid,
    penalty: f64,
    steps_per_interval: usize,
) -> Result<(f64, Vec<DVector<f64>>)> {
    let eval = evaluate_penalty(
        sys,
        x,
        y,
        control.values(),
        control.horizon(),
        penalty,
        steps_per_interval,
    )?;
    Ok((eval.objective, eval.gradient))
}

struct PenaltyEval {
    objective: f64,
    residual: f64,
    gradient: Vec<DVector<f64>>,
}

fn evaluate_penalty(
    sys: &ControlAffineSystem,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    controls: &[DVector<f64>],
    horizon: f64,
    penalty: f64,
    steps_per_interval: usize,
) -> Result<PenaltyEval> {
    let k_intervals = controls.len();
    let dt_control = horizon / k_intervals as f64;
    let h = dt_control / steps_per_interval as f64;
    let states = rollout_states(sys, x0, controls, horizon, steps_per_interval)?;

    let endpoint_gap = states.last().unwrap() - y;
    let residual = endpoint_gap.norm();
    let cost: f64 = 0.5 * dt_control * controls.iter().map(|u| u.norm_squared()).sum::<f64>();
    let objective = cost + 0.5 * penalty * residual * residual;

    // Backward sweep: adjoint of each RK4 step. For a step from state x with
    // control u, the stage linearizations give
    //   dx+/dx = I + h/6 (D1 + 2 D2 + 2 D3 + D4)
    //   dx+/du = h/6 (E1 + 2 E2 + 2 E3 + E4)
    // with D1 = A1, D_{i+1} = A_{i+1} (I + c_i h D_i),
    //      E1 = B1, E_{i+1} = c_i h A_{i+1} E_i + B_{i+1},
    // where A_i, B_i are the field Jacobians in x and u at the stage points
    // and c = (1/2, 1/2, 1).
    let d = sys.dim();
    let eye = DMatrix::identity(d, d);
    let mut adjoint = endpoint_gap * penalty;
    let mut gradient: Vec<DVector<f64>> = controls.iter().map(|u| u * dt_control).collect();

    for step in (0..k_intervals * steps_per_interval).rev() {
        let interval = step / steps_per_interval;
        let u = &controls[interval];
        let x = &states[step];

        let field = |p: &DVector<f64>| sys.controlled_field(p, u);
        let k1 = field(x);
        let p2 = x + &k1 * (h / 2.0);
        let k2 = field(&p2);
        let p3 = x + &k2 * (h / 2.0);
        let k3 = field(&p3);
        let p4 = x + &k3 * h;

        let a1 = sys.controlled_jacobian(x, u);
        let a2 = sys.controlled_jacobian(&p2, u);
        let a3 = sys.controlled_jacobian(&p3, u);
        let a4 = sys.controlled_jacobian(&p4, u);
        let b1 = sys.diffusion(x);
        let b2 = sys.diffusion(&p2);
        let b3 = sys.diffusion(&p3);
        let b4 = sys.diffusion(&p4);

        let d1 = a1;
        let d2 = &a2 * (&eye + &d1 * (h / 2.0));
        let d3 = &a3 * (&eye + &d2 * (h / 2.0));
        let d4 = &a4 * (&eye + &d3 * h);

        let e1 = b1;
        let e2 = &a2 * &e1 * (h / 2.0) + b2;
        let e3 = &a3 * &e2 * (h / 2.0) + b3;
        let e4 = &a4 * &e3 * h + b4;

        let step_jac = &eye + (d1 + d2 * 2.0 + d3 * 2.0 + d4) * (h / 6.0);
        let control_jac = (e1 + e2 * 2.0 + e3 * 2.0 + e4) * (h / 6.0);

        gradient[interval] += control_jac.transpose() * &adjoint;
        adjoint = step_jac.transpose() * adjoint;
    }

    Ok(PenaltyEval {
        objective,
        residual,
        gradient,
    })
}

/// Options for [`solve_min_action`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Endpoint tolerance; `None` resolves to `1e-6 (1 + |y|)`.
    pub endpoint_tol: Option<f64>,
    /// Iteration budget per penalty stage.
    pub max_iters_per_stage: usize,
    /// Relative gradient-stationarity threshold within a stage.
    pub grad_tol: f64,
    /// Initial penalty weight.
    pub penalty_init: f64,
    /// Geometric growth factor of the penalty.
    pub penalty_growth: f64,
    /// Largest penalty weight tried before declaring non-convergence.
    pub penalty_cap: f64,
    /// RK4 steps per control interval in the rollout.
    pub steps_per_interval: usize,
    /// Number of perturbed restarts beyond the feedback-linearization start.
    pub restarts: usize,
    /// Scale of the restart perturbations.
    pub restart_spread: f64,
    /// Seed for restart perturbations.
    pub seed: u64,
    /// Certified global bound on the drift-Jacobian measure. When present,
    /// the certificate's lower bound is certified; otherwise the measure is
    /// estimated along the autonomous flow and the bound is best-effort.
    pub measure_bound: Option<f64>,
    /// Simpson intervals for the upper bound.
    pub quad_points: usize,
    /// RK4 steps for the autonomous flow in the lower bound.
    pub flow_steps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            endpoint_tol: None,
            max_iters_per_stage: 200,
            grad_tol: 1e-9,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_cap: 1e10,
            steps_per_interval: 4,
            restarts: 0,
            restart_spread: 0.5,
            seed: 0,
            measure_bound: None,
            quad_points: 256,
            flow_steps: 1000,
        }
    }
}

/// Result of a minimum-action solve: numeric value, both bounds, and solver
/// diagnostics. On non-convergence the bounds are still valid and reported.
#[derive(Debug, Clone)]
pub struct ActionCertificate {
    /// `(1/2) sum |u_k|^2 dt` of the returned control: an upper estimate of
    /// the true minimum action once converged.
    pub value: f64,
    /// Feedback-linearization upper bound.
    pub upper_bound: f64,
    /// Stability-integral lower bound.
    pub lower_bound: f64,
    /// Whether the lower bound used a certified measure bound.
    pub lower_bound_certified: bool,
    /// `|x_u(T) - y|` of the returned control.
    pub endpoint_residual: f64,
    /// Accepted descent iterations, summed over penalty stages.
    pub iterations: usize,
    /// Penalty weight of the final stage.
    pub final_penalty: f64,
    /// Residual reached the endpoint tolerance.
    pub converged: bool,
    /// The optimizing control.
    pub control: ControlGrid,
}

/// Minimize the steering action from `x` to `y` over piecewise-constant
/// controls on `intervals` intervals, by penalty continuation with
/// conjugate-gradient descent, starting from the feedback-linearization
/// control (plus optional perturbed restarts, best result kept).
pub fn solve_min_action(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
    intervals: usize,
    opts: &SolveOptions,
) -> Result<ActionCertificate> {
    check_problem(sys, x, y, horizon)?;
    if intervals < 2 {
        return Err(Error::InvalidParameter("need at least two control intervals".into()));
    }
    let endpoint_tol = opts.endpoint_tol.unwrap_or(1e-6 * (1.0 + y.norm()));
    let fbl = feedback_linearization_control(sys, x, y, horizon, intervals)?;

    let starts: Vec<Vec<DVector<f64>>> = (0..=opts.restarts)
        .map(|r| {
            if r == 0 {
                fbl.values().to_vec()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64));
                fbl.values()
                    .iter()
                    .map(|u| {
                        u.map(|v| {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            v + opts.restart_spread * (1.0 + v.abs()) * noise
                        })
                    })
                    .collect()
            }
        })
        .collect();

    let runs: Vec<Result<SolverRun>> = starts
        .into_par_iter()
        .map(|start| run_penalty_continuation(sys, x, y, start, horizon, endpoint_tol, opts))
        .collect();

    let mut best: Option<SolverRun> = None;
    for run in runs {
        let run = run?;
        best = Some(match best {
            None => run,
            Some(cur) => {
                // Converged runs dominate; among equals take the lower value
                // (residual when unconverged), ties resolved by start order.
                let take_new = match (run.converged, cur.converged) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => run.value < cur.value,
                    (false, false) => run.residual < cur.residual,
                };
                if take_new {
                    run
                } else {
                    cur
                }
            }
        });
    }
    let best = best.expect("at least one start");

    let upper_bound = action_upper_bound(sys, x, y, horizon, opts.quad_points)?;
    let (stability, certified) = match opts.measure_bound {
        Some(m) => (stability_bound(m, horizon), true),
        None => {
            let est = stability_along_trajectory(sys, x, horizon, opts.flow_steps)?;
            (stability_bound(est.measure_bound, horizon), false)
        }
    };
    let lower_bound = action_lower_bound(sys, x, y, horizon, stability, opts.flow_steps)?;

    Ok(ActionCertificate {
        value: best.value,
        upper_bound,
        lower_bound,
        lower_bound_certified: certified,
        endpoint_residual: best.residual,
        iterations: best.iterations,
        final_penalty: best.penalty,
        converged: best.converged,
        control: ControlGrid::new(horizon, best.controls)?,
    })
}

struct SolverRun {
    controls: Vec<DVector<f64>>,
    value: f64,
    residual: f64,
    iterations: usize,
    penalty: f64,
    converged: bool,
}

fn run_penalty_continuation(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    mut controls: Vec<DVector<f64>>,
    horizon: f64,
    endpoint_tol: f64,
    opts: &SolveOptions,
) -> Result<SolverRun> {
    let mut penalty = opts.penalty_init;
    let mut iterations = 0;
    loop {
        let outcome = minimize_stage(sys, x, y, &mut controls, horizon, penalty, opts)?;
        iterations += outcome.iterations;
        let finished = outcome.residual <= endpoint_tol;
        if finished || penalty >= opts.penalty_cap {
            let dt = horizon / controls.len() as f64;
            let value = 0.5 * dt * controls.iter().map(|u| u.norm_squared()).sum::<f64>();
            return Ok(SolverRun {
                controls,
                value,
                residual: outcome.residual,
                iterations,
                penalty,
                converged: finished,
            });
        }
        penalty = (penalty * opts.penalty_growth).min(opts.penalty_cap);
    }
}

struct StageOutcome {
    residual: f64,
    iterations: usize,
}

/// Minimize one penalty stage with Polak-Ribiere conjugate gradient. The
/// line search backtracks on the Armijo condition and then refines the
/// accepted step with one secant correction toward the stationary point
/// along the ray, which makes stages terminate in a handful of iterations
/// on the (identity + low-rank) penalty Hessians produced by transcription.
fn minimize_stage(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    controls: &mut Vec<DVector<f64>>,
    horizon: f64,
    penalty: f64,
    opts: &SolveOptions,
) -> Result<StageOutcome> {
    const ARMIJO_C1: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 40;

    let eval = |u: &[DVector<f64>]| {
        evaluate_penalty(sys, x, y, u, horizon, penalty, opts.steps_per_interval)
    };

    let mut current = eval(controls)?;
    let mut direction = scale(&current.gradient, -1.0);
    let mut grad_sq = dot(&current.gradient, &current.gradient);
    let mut alpha_init = 1.0 / (1.0 + grad_sq.sqrt());
    let mut iterations = 0;
    let mut stalls = 0;
    let mut forced_steepest = false;

    while iterations < opts.max_iters_per_stage {
        let gtol = opts.grad_tol * (1.0 + current.objective.abs());
        if grad_sq.sqrt() <= gtol {
            break;
        }
        let mut slope = dot(&current.gradient, &direction);
        if slope >= 0.0 {
            direction = scale(&current.gradient, -1.0);
            slope = -grad_sq;
        }

        let mut alpha = alpha_init;
        let mut accepted: Option<(f64, PenaltyEval)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial_u = add_scaled(controls, alpha, &direction);
            match eval(&trial_u) {
                Ok(trial) if trial.objective <= current.objective + ARMIJO_C1 * alpha * slope => {
                    // Secant refinement toward the 1-d stationary point; on a
                    // quadratic objective this lands on the exact minimizer.
                    let trial_slope = dot(&trial.gradient, &direction);
                    let denom = slope - trial_slope;
                    if denom < 0.0 {
                        let alpha_star = alpha * slope / denom;
                        if alpha_star.is_finite()
                            && alpha_star > 0.0
                            && (alpha_star - alpha).abs() > 1e-3 * alpha
                            && alpha_star < 100.0 * alpha
                        {
                            let refine_u = add_scaled(controls, alpha_star, &direction);
                            if let Ok(refined) = eval(&refine_u) {
                                if refined.objective < trial.objective {
                                    accepted = Some((alpha_star, refined));
                                }
                            }
                        }
                    }
                    if accepted.is_none() {
                        accepted = Some((alpha, trial));
                    }
                    break;
                }
                Ok(trial) => {
                    // Quadratic interpolation of the step, clamped to [0.1, 0.5] alpha.
                    let denom = 2.0 * (trial.objective - current.objective - slope * alpha);
                    let quad = if denom > 0.0 {
                        -slope * alpha * alpha / denom
                    } else {
                        0.5 * alpha
                    };
                    alpha = quad.clamp(0.1 * alpha, 0.5 * alpha);
                }
                Err(_) => {
                    // Trial rollout blew up: shrink hard.
                    alpha *= 0.1;
                }
            }
        }

        let Some((step, next)) = accepted else {
            if forced_steepest {
                break;
            }
            // Retry once from steepest descent before giving up on the stage.
            forced_steepest = true;
            direction = scale(&current.gradient, -1.0);
            alpha_init = 1.0 / (1.0 + grad_sq.sqrt());
            continue;
        };
        forced_steepest = false;

        let decrease = current.objective - next.objective;
        *controls = add_scaled(controls, step, &direction);
        let new_grad_sq = dot(&next.gradient, &next.gradient);
        // Polak-Ribiere+ update.
        let beta = ((new_grad_sq - dot(&next.gradient, &current.gradient)) / grad_sq).max(0.0);
        direction = neg_add_scaled(&next.gradient, beta, &direction);
        current = next;
        grad_sq = new_grad_sq;
        alpha_init = (step * 2.0).clamp(1e-12, 1e6);
        iterations += 1;

        if decrease <= 1e-16 * (1.0 + current.objective.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    Ok(StageOutcome {
        residual: current.residual,
        iterations,
    })
}

fn check_problem(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: f64,
) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if x.len() != sys.dim() || y.len() != sys.dim() {
        return Err(Error::InvalidParameter(format!(
            "endpoint dimensions ({}, {}) must match the system dimension {}",
            x.len(),
            y.len(),
            sys.dim()
        )));
    }
    Ok(())
}

fn dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn scale(a: &[DVector<f64>], c: f64) -> Vec<DVector<f64>> {
    a.iter().map(|v| v * c).collect()
}

fn add_scaled(a: &[DVector<f64>], c: f64, b: &[DVector<f64>]) -> Vec<DVector<f64>> {
    a.iter().zip(b).map(|(x, y)| x + y * c).collect()
}

/// `-g + beta * d`.
fn neg_add_scaled(g: &[DVector<f64>], beta: f64, d: &[DVector<f64>]) -> Vec<DVector<f64>> {
    g.iter().zip(d).map(|(gi, di)| di * beta - gi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearParams, RnnParams};
    use approx::assert_relative_eq;

    fn trivial_system(d: usize) -> ControlAffineSystem {
        ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::zeros(d, d),
            DMatrix::identity(d, d),
        ))
        .unwrap()
    }

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn fbl_control_of_trivial_system_is_constant() {
        let sys = trivial_system(2);
        let x = dvec(&[0.0, 0.0]);
        let y = dvec(&[1.0, -1.0]);
        let u = feedback_linearization_control(&sys, &x, &y, 2.0, 8).unwrap();
        for v in u.values() {
            assert_relative_eq!(v, &((&y - &x) / 2.0), epsilon = 1e-14);
        }
        assert_relative_eq!(u.cost(), (&y - &x).norm_squared() / (2.0 * 2.0), epsilon = 1e-14);
    }

    #[test]
    fn fbl_scalar_unit_steering_costs_one_half() {
        let sys = trivial_system(1);
        let u = feedback_linearization_control(&sys, &dvec(&[0.0]), &dvec(&[1.0]), 1.0, 16).unwrap();
        assert_relative_eq!(u.cost(), 0.5, epsilon = 1e-14);
        for v in u.values() {
            assert_relative_eq!(v[0], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn upper_bound_of_trivial_system() {
        let sys = trivial_system(3);
        let x = dvec(&[0.0, 0.0, 0.0]);
        let y = dvec(&[1.0, 2.0, 2.0]);
        let ub = action_upper_bound(&sys, &x, &y, 3.0, 64).unwrap();
        assert_relative_eq!(ub, y.norm_squared() / (2.0 * 3.0), epsilon = 1e-12);
    }

    #[test]
    fn upper_bound_scalar_contraction_hand_value() {
        // f(x) = -x, x = 0, y = 1, T = 1: integrand (1 + t)^2, integral 7/3,
        // bound 7/6.
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::identity(1, 1),
        ))
        .unwrap();
        let ub = action_upper_bound(&sys, &dvec(&[0.0]), &dvec(&[1.0]), 1.0, 200).unwrap();
        assert_relative_eq!(ub, 7.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn free_evolution_target_has_zero_lower_bound_but_positive_upper() {
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::identity(1, 1),
        ))
        .unwrap();
        let x = dvec(&[1.0]);
        let y = dvec(&[(-1.0f64).exp()]);
        let lb = action_lower_bound(&sys, &x, &y, 1.0, 1.0, 400).unwrap();
        assert!(lb < 1e-12);
        // The straight-line upper bound is strictly positive here: zero
        // control steers exactly, but the straight line is not the free path.
        let ub = action_upper_bound(&sys, &x, &y, 1.0, 200).unwrap();
        assert!(ub > 0.01);
    }

    #[test]
    fn lower_bound_matches_upper_for_trivial_system() {
        let sys = trivial_system(2);
        let x = dvec(&[0.0, 0.0]);
        let y = dvec(&[2.0, -1.0]);
        let horizon = 2.0;
        let lb = action_lower_bound(&sys, &x, &y, horizon, horizon, 100).unwrap();
        let ub = action_upper_bound(&sys, &x, &y, horizon, 64).unwrap();
        assert_relative_eq!(lb, ub, epsilon = 1e-10);
    }

    #[test]
    fn lower_bound_rejects_nonpositive_stability() {
        let sys = trivial_system(1);
        assert!(action_lower_bound(&sys, &dvec(&[0.0]), &dvec(&[1.0]), 1.0, 0.0, 10).is_err());
    }

    #[test]
    fn rollout_with_zero_control_equals_flow() {
        let p = RnnParams::new(1.0, DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]), 1.0);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let x = dvec(&[0.5, -0.5]);
        let u = ControlGrid::constant(1.0, 10, DVector::zeros(2)).unwrap();
        let rolled = rollout(&sys, &x, &u, 10).unwrap();
        let flowed = flow(&sys, &x, 1.0, 100).unwrap();
        assert!((rolled.final_state() - flowed.final_state()).norm() < 1e-12);
    }

    #[test]
    fn rollout_of_constant_control_on_trivial_system() {
        let sys = trivial_system(2);
        let x = dvec(&[1.0, 1.0]);
        let c = dvec(&[0.5, -0.25]);
        let u = ControlGrid::constant(4.0, 8, c.clone()).unwrap();
        let traj = rollout(&sys, &x, &u, 2).unwrap();
        assert_relative_eq!(traj.final_state(), &(&x + &c * 4.0), epsilon = 1e-12);
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        let p = RnnParams::new(0.8, DMatrix::from_row_slice(2, 2, &[0.4, -0.3, 0.2, 0.5]), 0.9);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let x = dvec(&[0.3, -0.1]);
        let y = dvec(&[-0.5, 0.7]);
        let mut vals = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..6 {
            let noise: f64 = StandardNormal.sample(&mut rng);
            vals.push(dvec(&[noise, 0.3 * noise - 0.2]));
        }
        let grid = ControlGrid::new(1.2, vals).unwrap();
        let penalty = 50.0;
        let (j0, grad) = penalty_objective_gradient(&sys, &x, &y, &grid, penalty, 3).unwrap();
        assert!(j0 > 0.0);

        let h = 1e-5;
        for (k, i) in [(0usize, 0usize), (2, 1), (5, 0), (3, 1), (1, 0)] {
            let mut up = grid.clone();
            up.values[k][i] += h;
            let mut dn = grid.clone();
            dn.values[k][i] -= h;
            let (jp, _) = penalty_objective_gradient(&sys, &x, &y, &up, penalty, 3).unwrap();
            let (jm, _) = penalty_objective_gradient(&sys, &x, &y, &dn, penalty, 3).unwrap();
            let fd = (jp - jm) / (2.0 * h);
            let rel = (grad[k][i] - fd).abs() / grad[k][i].abs().max(1e-8);
            assert!(
                rel < 1e-5,
                "gradient mismatch at ({k},{i}): adjoint {} vs fd {fd}",
                grad[k][i]
            );
        }
    }

    #[test]
    fn solve_trivial_steering_recovers_constant_control() {
        let sys = trivial_system(2);
        let x = dvec(&[0.0, 0.0]);
        let y = dvec(&[1.0, 0.0]);
        let cert = solve_min_action(&sys, &x, &y, 1.0, 16, &SolveOptions::default()).unwrap();
        assert!(cert.converged, "trivial solve should converge");
        assert_relative_eq!(cert.value, 0.5, epsilon = 1e-4);
        for u in cert.control.values() {
            assert!((u - dvec(&[1.0, 0.0])).norm() < 1e-2);
        }
        assert!(cert.lower_bound <= cert.value + 1e-9);
        assert!(cert.value <= cert.upper_bound + 1e-9);
    }

    #[test]
    fn solve_free_evolution_target_costs_nothing() {
        let p = RnnParams::new(1.0, DMatrix::from_row_slice(1, 1, &[0.6]), 0.8);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let x = dvec(&[0.4]);
        let target = flow(&sys, &x, 1.0, 1000).unwrap().final_state().clone();
        let cert = solve_min_action(&sys, &x, &target, 1.0, 16, &SolveOptions::default()).unwrap();
        assert!(cert.converged);
        assert!(
            cert.value <= 1e-6,
            "steering to the free endpoint should be free, got {}",
            cert.value
        );
    }

    #[test]
    fn solve_scales_inversely_with_horizon() {
        let sys = trivial_system(1);
        let x = dvec(&[0.0]);
        let y = dvec(&[1.0]);
        for horizon in [0.5, 1.0, 2.0, 4.0] {
            let cert = solve_min_action(&sys, &x, &y, horizon, 16, &SolveOptions::default()).unwrap();
            assert!(cert.converged);
            assert_relative_eq!(cert.value, 0.5 / horizon, epsilon = 1e-4);
        }
    }

    #[test]
    fn refine_double_preserves_the_signal_and_cost() {
        let grid = ControlGrid::new(2.0, vec![dvec(&[1.0]), dvec(&[-2.0])]).unwrap();
        let fine = grid.refine_double();
        assert_eq!(fine.intervals(), 4);
        assert_relative_eq!(fine.cost(), grid.cost(), epsilon = 1e-15);
        assert_eq!(fine.value_at(0.3), grid.value_at(0.3));
        assert_eq!(fine.value_at(1.7), grid.value_at(1.7));
    }

    #[test]
    fn solver_rejects_degenerate_problems() {
        let sys = trivial_system(1);
        let x = dvec(&[0.0]);
        let y = dvec(&[1.0]);
        assert!(solve_min_action(&sys, &x, &y, 0.0, 8, &SolveOptions::default()).is_err());
        assert!(solve_min_action(&sys, &x, &y, 1.0, 1, &SolveOptions::default()).is_err());
        assert!(solve_min_action(&sys, &x, &dvec(&[1.0, 2.0]), 1.0, 8, &SolveOptions::default()).is_err());
    }
}
