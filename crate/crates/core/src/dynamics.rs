//! Control-affine systems `x' = f(x) + g(x)u` and their stochastic
//! counterparts `dX = f dt + g dW`, with the built-in model families
//! (linear, stochastic recurrent net) and drift-regularity quantities
//! (Jacobians, matrix measure, measure suprema).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{matrix_measure, symmetric_eigen_range};
use crate::sampling::SampleBox;

type VecField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Relative tolerance below which the smallest eigenvalue of `G G^T` is
/// treated as zero when building a linear system.
const ELLIPTICITY_EIG_TOL: f64 = 1e-12;

/// An immutable control-affine system. Shared freely across threads; every
/// operation on it is a pure function of its arguments.
#[derive(Clone)]
pub struct ControlAffineSystem {
    dim: usize,
    drift: VecField,
    diffusion: MatField,
    drift_jacobian: Option<MatField>,
    lambda_min: f64,
    lambda_max: f64,
    constant_diffusion: bool,
}

impl std::fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("dim", &self.dim)
            .field("lambda_min", &self.lambda_min)
            .field("lambda_max", &self.lambda_max)
            .field("analytic_jacobian", &self.drift_jacobian.is_some())
            .field("constant_diffusion", &self.constant_diffusion)
            .finish()
    }
}

impl ControlAffineSystem {
    /// Build a system from closures. `lambda_min`/`lambda_max` are the
    /// uniform-ellipticity bounds on the eigenvalues of `g(x) g(x)^T`;
    /// they are trusted here and can be spot-checked with
    /// [`validate_ellipticity`].
    pub fn new(
        dim: usize,
        drift: VecField,
        diffusion: MatField,
        drift_jacobian: Option<MatField>,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(lambda_min > 0.0) || !(lambda_min <= lambda_max) {
            return Err(Error::InvalidParameter(format!(
                "ellipticity bounds must satisfy 0 < lambda_min <= lambda_max, got ({lambda_min}, {lambda_max})"
            )));
        }
        Ok(Self {
            dim,
            drift,
            diffusion,
            drift_jacobian,
            lambda_min,
            lambda_max,
            constant_diffusion: false,
        })
    }

    /// Mark the diffusion matrix as state-independent. Solvers exploit this
    /// when linearizing the controlled vector field.
    pub fn with_constant_diffusion(mut self) -> Self {
        self.constant_diffusion = true;
        self
    }

    /// Stochastic recurrent net: `f(x) = -x/tau + A sigma(x)`, `g(x) = c I`.
    ///
    /// The induced ellipticity bounds are exactly `lambda_min = lambda_max = c^2`
    /// and the drift Jacobian `-I/tau + A diag(sigma'(x))` is attached
    /// analytically.
    pub fn from_rnn(params: &RnnParams) -> Result<Self> {
        params.validate()?;
        let d = params.weights.nrows();
        let tau = params.tau;
        let sigma = params.sigmoid;
        let a = params.weights.clone();
        let a_jac = params.weights.clone();
        let drift: VecField = Arc::new(move |x: &DVector<f64>| {
            let activated = x.map(|v| sigma.value(v));
            -x / tau + &a * activated
        });
        let c = params.noise;
        let diffusion: MatField = Arc::new(move |_x: &DVector<f64>| DMatrix::identity(d, d) * c);
        let jacobian: MatField = Arc::new(move |x: &DVector<f64>| {
            let mut jac = &a_jac * DMatrix::from_diagonal(&x.map(|v| sigma.slope(v)));
            for i in 0..d {
                jac[(i, i)] -= 1.0 / tau;
            }
            jac
        });
        let c2 = params.noise * params.noise;
        Ok(Self::new(d, drift, diffusion, Some(jacobian), c2, c2)?.with_constant_diffusion())
    }

    /// Linear system: `f(x) = A x`, `g(x) = G`, with ellipticity bounds the
    /// extreme eigenvalues of `G G^T`. Rejects `G G^T` that is singular to
    /// working precision, since every solver here relies on invertible `g`.
    pub fn from_linear(params: &LinearParams) -> Result<Self> {
        params.validate()?;
        let d = params.state_matrix.nrows();
        let ggt = &params.input_matrix * params.input_matrix.transpose();
        let (lo, hi) = symmetric_eigen_range(&ggt);
        if lo <= ELLIPTICITY_EIG_TOL * hi.max(1.0) {
            return Err(Error::Singular(format!(
                "G G^T must be positive definite; smallest eigenvalue {lo:.3e}"
            )));
        }
        let a = params.state_matrix.clone();
        let a_jac = params.state_matrix.clone();
        let g = params.input_matrix.clone();
        let drift: VecField = Arc::new(move |x: &DVector<f64>| &a * x);
        let diffusion: MatField = Arc::new(move |_x: &DVector<f64>| g.clone());
        let jacobian: MatField = Arc::new(move |_x: &DVector<f64>| a_jac.clone());
        Ok(Self::new(d, drift, diffusion, Some(jacobian), lo, hi)?.with_constant_diffusion())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Ellipticity lower bound on the eigenvalues of `g g^T`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Ellipticity upper bound on the eigenvalues of `g g^T`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.drift_jacobian.is_some()
    }

    pub fn is_constant_diffusion(&self) -> bool {
        self.constant_diffusion
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(x)
    }

    /// Drift Jacobian: analytic when provided, otherwise central finite
    /// differences with `h = max(1e-5, 1e-7 |x|)`.
    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.drift_jacobian {
            Some(jac) => jac(x),
            None => finite_difference_jacobian(&*self.drift, x),
        }
    }

    /// Controlled vector field `f(x) + g(x)u`.
    pub fn controlled_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.diffusion(x) * u
    }

    /// Jacobian in `x` of the controlled field `f(x) + g(x)u`. Exact for
    /// constant-diffusion systems; finite differences otherwise.
    pub fn controlled_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        if self.constant_diffusion {
            self.drift_jacobian(x)
        } else {
            let drift = Arc::clone(&self.drift);
            let diffusion = Arc::clone(&self.diffusion);
            let u = u.clone();
            let field = move |p: &DVector<f64>| drift(p) + diffusion(p) * &u;
            finite_difference_jacobian(&field, x)
        }
    }
}

/// Central finite-difference Jacobian with `h = max(1e-5, 1e-7 |x|)`.
pub fn finite_difference_jacobian<F>(f: &F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let d = x.len();
    let h = 1e-5f64.max(1e-7 * x.norm());
    let mut jac = DMatrix::zeros(f(x).len(), d);
    let mut xp = x.clone();
    for j in 0..d {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Scalar sigmoids with a certified slope bound `0 <= sigma' <= gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigmoid {
    /// `tanh`, slope bound 1.
    Tanh,
    /// `1 / (1 + e^-r)`, slope bound 1/4.
    Logistic,
}

impl Sigmoid {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Self::Tanh),
            "logistic" => Ok(Self::Logistic),
            other => Err(Error::InvalidParameter(format!(
                "unknown sigmoid '{other}' (expected 'tanh' or 'logistic')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Logistic => "logistic",
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            Self::Tanh => r.tanh(),
            Self::Logistic => 1.0 / (1.0 + (-r).exp()),
        }
    }

    pub fn slope(&self, r: f64) -> f64 {
        match self {
            Self::Tanh => {
                let t = r.tanh();
                1.0 - t * t
            }
            Self::Logistic => {
                let s = self.value(r);
                s * (1.0 - s)
            }
        }
    }

    /// Certified global bound on the slope.
    pub fn slope_bound(&self) -> f64 {
        match self {
            Self::Tanh => 1.0,
            Self::Logistic => 0.25,
        }
    }
}

/// Parameters of the stochastic recurrent net family.
#[derive(Debug, Clone)]
pub struct RnnParams {
    /// Leak time constant, > 0.
    pub tau: f64,
    /// Square weight matrix.
    pub weights: DMatrix<f64>,
    /// Additive noise level, > 0; the diffusion matrix is `noise * I`.
    pub noise: f64,
    /// Scalar nonlinearity applied coordinatewise.
    pub sigmoid: Sigmoid,
    /// Certified slope bound; defaults to the sigmoid's own bound.
    pub slope_bound: f64,
}

impl RnnParams {
    pub fn new(tau: f64, weights: DMatrix<f64>, noise: f64) -> Self {
        Self {
            tau,
            weights,
            noise,
            sigmoid: Sigmoid::Tanh,
            slope_bound: Sigmoid::Tanh.slope_bound(),
        }
    }

    pub fn with_sigmoid(mut self, sigmoid: Sigmoid) -> Self {
        self.sigmoid = sigmoid;
        self.slope_bound = sigmoid.slope_bound();
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rnn time constant must be positive, got {}",
                self.tau
            )));
        }
        if !(self.noise > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rnn noise level must be positive, got {}",
                self.noise
            )));
        }
        if !(self.slope_bound > 0.0) {
            return Err(Error::InvalidParameter("slope bound must be positive".into()));
        }
        if self.weights.nrows() != self.weights.ncols() || self.weights.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "rnn weight matrix must be square and nonempty, got {}x{}",
                self.weights.nrows(),
                self.weights.ncols()
            )));
        }
        Ok(())
    }
}

/// Parameters of the linear family: `f(x) = A x`, `g(x) = G`.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub state_matrix: DMatrix<f64>,
    pub input_matrix: DMatrix<f64>,
}

impl LinearParams {
    pub fn new(state_matrix: DMatrix<f64>, input_matrix: DMatrix<f64>) -> Self {
        Self {
            state_matrix,
            input_matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.state_matrix.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.state_matrix.nrows();
        if d == 0 || self.state_matrix.ncols() != d {
            return Err(Error::InvalidParameter("state matrix must be square and nonempty".into()));
        }
        if self.input_matrix.nrows() != d || self.input_matrix.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "input matrix must be {d}x{d} to match the state matrix"
            )));
        }
        Ok(())
    }
}

/// Largest matrix measure of the drift Jacobian over `n_samples` uniform
/// draws from `region`. A lower estimate of the true supremum; monotone
/// nondecreasing as the sample count grows (draws are prefix-stable in the
/// seed).
pub fn estimate_measure_sup(
    sys: &ControlAffineSystem,
    region: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let x = region.sample(&mut rng);
        sup = sup.max(matrix_measure(&sys.drift_jacobian(&x)));
    }
    sup
}

/// Gershgorin-disc upper bound on the measure supremum for the recurrent-net
/// family: `-1/tau + gamma * max_i (A_ii + (1/2) sum_{j != i} (|A_ij| + |A_ji|))`.
///
/// Certified: holds for every state, not just sampled ones.
pub fn gershgorin_measure_bound(params: &RnnParams) -> f64 {
    let a = &params.weights;
    let d = a.nrows();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..d {
        let mut row = a[(i, i)];
        for j in 0..d {
            if j != i {
                row += 0.5 * (a[(i, j)].abs() + a[(j, i)].abs());
            }
        }
        worst = worst.max(row);
    }
    -1.0 / params.tau + params.slope_bound * worst
}

/// Spot-check of the uniform-ellipticity bounds: samples `region` and
/// verifies that the eigenvalues of `g(x) g(x)^T` stay within
/// `[lambda_min - tol, lambda_max + tol]`. Returns the worst excess
/// (negative when the bounds hold with slack).
pub fn validate_ellipticity(
    sys: &ControlAffineSystem,
    region: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let x = region.sample(&mut rng);
        let g = sys.diffusion(&x);
        let (lo, hi) = symmetric_eigen_range(&(&g * g.transpose()));
        worst = worst.max(sys.lambda_min() - lo).max(hi - sys.lambda_max());
    }
    worst
}

/// Diagnostic estimate of the Lipschitz constant of the drift over a region:
/// the largest ratio `|f(x) - f(y)| / |x - y|` over sampled pairs. A lower
/// estimate, not a certified bound.
pub fn estimate_drift_lipschitz(
    sys: &ControlAffineSystem,
    region: &SampleBox,
    n_pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..n_pairs {
        let x = region.sample(&mut rng);
        let y = region.sample(&mut rng);
        let gap = (&x - &y).norm();
        if gap > 1e-12 {
            best = best.max((sys.drift(&x) - sys.drift(&y)).norm() / gap);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn rnn_zero_weights_is_pure_leak() {
        let p = RnnParams::new(1.0, DMatrix::zeros(2, 2), 1.0);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let x = dvec(&[1.0, 2.0]);
        assert_relative_eq!(sys.drift(&x), dvec(&[-1.0, -2.0]), epsilon = 1e-15);
        assert_relative_eq!(sys.diffusion(&x), DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_relative_eq!(sys.lambda_min(), 1.0);
        assert_relative_eq!(sys.lambda_max(), 1.0);
    }

    #[test]
    fn rnn_identity_weights_jacobian_at_origin() {
        // tanh(0) = 0 and tanh'(0) = 1, so f(0) = 0 and f_*(0) = -I + I = 0.
        let p = RnnParams::new(1.0, DMatrix::identity(2, 2), 0.5);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let zero = dvec(&[0.0, 0.0]);
        assert!(sys.drift(&zero).norm() < 1e-15);
        assert!(sys.drift_jacobian(&zero).norm() < 1e-15);
        assert_relative_eq!(sys.lambda_min(), 0.25);
    }

    #[test]
    fn rnn_drift_and_jacobian_match_finite_differences() {
        let p = RnnParams::new(
            2.0,
            DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4]),
            1.0,
        );
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let x = dvec(&[0.5, -0.5]);

        // Independent direct evaluation of the defining formula.
        let t = 0.5f64.tanh();
        let expected = dvec(&[
            -0.25 + 0.3 * t - 0.1 * (-t),
            0.25 + 0.2 * t + 0.4 * (-t),
        ]);
        assert_relative_eq!(sys.drift(&x), expected, epsilon = 1e-14);

        let drift = |p: &DVector<f64>| sys.drift(p);
        let fd = finite_difference_jacobian(&drift, &x);
        let analytic = sys.drift_jacobian(&x);
        assert!(
            (fd - &analytic).norm() / analytic.norm().max(1.0) < 1e-9,
            "analytic Jacobian disagrees with central differences"
        );
    }

    #[test]
    fn rnn_rejects_bad_parameters() {
        assert!(ControlAffineSystem::from_rnn(&RnnParams::new(0.0, DMatrix::zeros(2, 2), 1.0)).is_err());
        assert!(ControlAffineSystem::from_rnn(&RnnParams::new(1.0, DMatrix::zeros(2, 2), 0.0)).is_err());
        assert!(ControlAffineSystem::from_rnn(&RnnParams::new(1.0, DMatrix::zeros(2, 3), 1.0)).is_err());
    }

    #[test]
    fn linear_zero_state_matrix() {
        let p = LinearParams::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let x = dvec(&[3.0, -4.0]);
        assert!(sys.drift(&x).norm() == 0.0);
        assert_relative_eq!(sys.lambda_min(), 1.0);
        assert_relative_eq!(sys.lambda_max(), 1.0);
    }

    #[test]
    fn linear_skew_jacobian_has_zero_measure() {
        let p = LinearParams::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::identity(2, 2),
        );
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let jac = sys.drift_jacobian(&dvec(&[5.0, 7.0]));
        assert!(matrix_measure(&jac).abs() < 1e-14);
    }

    #[test]
    fn linear_ellipticity_from_input_matrix() {
        let p = LinearParams::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
        );
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        assert_relative_eq!(sys.lambda_min(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sys.lambda_max(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_rejects_singular_input_matrix() {
        let p = LinearParams::new(DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            ControlAffineSystem::from_linear(&p),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn measure_sup_of_linear_system_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -0.5]);
        let p = LinearParams::new(a.clone(), DMatrix::identity(2, 2));
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let region = SampleBox::symmetric(2, 10.0).unwrap();
        let est = estimate_measure_sup(&sys, &region, 25, 42);
        assert_relative_eq!(est, matrix_measure(&a), epsilon = 1e-12);
    }

    #[test]
    fn measure_sup_of_leak_only_rnn() {
        let p = RnnParams::new(2.0, DMatrix::zeros(3, 3), 1.0);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let region = SampleBox::symmetric(3, 2.0).unwrap();
        let est = estimate_measure_sup(&sys, &region, 50, 1);
        assert_relative_eq!(est, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn gershgorin_bound_hand_example() {
        let p = RnnParams::new(
            1.0,
            DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.1, 0.3]),
            1.0,
        );
        // -1 + max(0.5 + 0.15, 0.3 + 0.15) = -0.35
        assert_relative_eq!(gershgorin_measure_bound(&p), -0.35, epsilon = 1e-14);
    }

    #[test]
    fn gershgorin_bound_of_zero_weights() {
        let p = RnnParams::new(4.0, DMatrix::zeros(3, 3), 1.0);
        assert_relative_eq!(gershgorin_measure_bound(&p), -0.25, epsilon = 1e-15);
    }

    #[test]
    fn gershgorin_dominates_sampled_measure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let d = 1 + trial % 4;
            let region = SampleBox::symmetric(d, 3.0).unwrap();
            let w = DMatrix::from_fn(d, d, |_, _| region.sample(&mut rng)[0] * 0.3);
            let p = RnnParams::new(1.0, w, 0.7);
            let sys = ControlAffineSystem::from_rnn(&p).unwrap();
            let est = estimate_measure_sup(&sys, &region, 200, trial as u64);
            let bound = gershgorin_measure_bound(&p);
            assert!(
                est <= bound + 1e-9,
                "sampled measure {est} exceeded certified bound {bound}"
            );
        }
    }

    #[test]
    fn ellipticity_validation_flags_mismatch() {
        let p = LinearParams::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let region = SampleBox::symmetric(2, 1.0).unwrap();
        assert!(validate_ellipticity(&sys, &region, 10, 0) <= 1e-12);
    }

    #[test]
    fn lipschitz_estimate_of_linear_drift() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let p = LinearParams::new(a, DMatrix::identity(2, 2));
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let region = SampleBox::symmetric(2, 1.0).unwrap();
        let est = estimate_drift_lipschitz(&sys, &region, 500, 5);
        // Spectral norm of A is 2; sampled ratios must stay below it.
        assert!(est <= 2.0 + 1e-9 && est > 1.0);
    }
}
