//! Euler-Maruyama simulation of the SDE `dX = f dt + g dW` and the Monte
//! Carlo estimators built on it: the readout mean `F(x) = E<alpha, X_T>`,
//! the distribution-averaged conditional readout variance, the 1/N
//! approximation-rate experiment, and the closed-form variance upper bound.
//!
//! Randomness is fully reproducible: every sample draws from its own
//! counter-derived stream, `derive_seed(base_seed, sample_index)`, so results
//! do not depend on evaluation order or thread count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::flow::flow;
use crate::linalg::all_finite_vec;
use crate::sampling::SampleBox;

/// SplitMix64-style mix of a base seed and a sample counter. Two rounds of
/// the finalizer keep distinct `(base, index)` pairs statistically
/// independent.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let salted = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    mix(mix(salted))
}

/// The neural-SDE model: a control-affine system driven by Brownian noise,
/// a linear readout vector, a horizon, and the Euler-Maruyama step count.
#[derive(Debug, Clone)]
pub struct NeuralSdeModel {
    pub system: ControlAffineSystem,
    pub readout: DVector<f64>,
    pub horizon: f64,
    pub steps: usize,
}

impl NeuralSdeModel {
    pub fn new(
        system: ControlAffineSystem,
        readout: DVector<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "model horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("Euler-Maruyama needs at least one step".into()));
        }
        if readout.len() != system.dim() {
            return Err(Error::InvalidParameter(format!(
                "readout has dimension {}, system has {}",
                readout.len(),
                system.dim()
            )));
        }
        if !all_finite_vec(&readout) {
            return Err(Error::InvalidParameter("readout must be finite".into()));
        }
        Ok(Self {
            system,
            readout,
            horizon,
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Readout of an endpoint sample.
    pub fn readout_of(&self, endpoint: &DVector<f64>) -> f64 {
        self.readout.dot(endpoint)
    }
}

/// One Euler-Maruyama endpoint: `X_{l+1} = X_l + dt f(X_l) + sqrt(dt) g(X_l) w_l`
/// with i.i.d. standard Gaussian `w_l`. Deterministic in `(model, x, seed)`.
pub fn em_endpoint(model: &NeuralSdeModel, x: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(Error::InvalidParameter("initial state dimension mismatch".into()));
    }
    let d = model.dim();
    let dt = model.horizon / model.steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = x.clone();
    for step in 0..model.steps {
        let noise = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        state += model.system.drift(&state) * dt + model.system.diffusion(&state) * noise * sqrt_dt;
        if !all_finite_vec(&state) {
            return Err(Error::Blowup {
                time: (step + 1) as f64 * dt,
            });
        }
    }
    Ok(state)
}

/// `n` independent endpoints from counter-derived streams, in sample order.
pub fn sample_endpoints(
    model: &NeuralSdeModel,
    x: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| em_endpoint(model, x, derive_seed(seed, i as u64)))
        .collect()
}

/// Monte Carlo mean with its unbiased sample variance and the seed that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Unbiased sample variance (zero when fewer than two samples).
    pub variance: f64,
    pub count: usize,
    pub seed: u64,
    /// `sqrt(variance / count)`.
    pub standard_error: f64,
}

impl McEstimate {
    fn from_samples(samples: &[f64], seed: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter("estimates need at least two samples".into()));
        }
        let (mean, variance) = mean_variance(samples);
        Ok(Self {
            mean,
            variance,
            count: samples.len(),
            seed,
            standard_error: (variance / samples.len() as f64).sqrt(),
        })
    }
}

/// Welford single-pass mean and unbiased variance.
fn mean_variance(samples: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &s) in samples.iter().enumerate() {
        let delta = s - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (s - mean);
    }
    let variance = if samples.len() > 1 {
        m2 / (samples.len() - 1) as f64
    } else {
        0.0
    };
    (mean, variance)
}

/// Monte Carlo estimate of the represented function `F(x) = E<alpha, X_T>`.
pub fn estimate_readout(
    model: &NeuralSdeModel,
    x: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    let samples: Vec<f64> = sample_endpoints(model, x, n, seed)?
        .iter()
        .map(|e| model.readout_of(e))
        .collect();
    McEstimate::from_samples(&samples, seed)
}

/// Initial-condition distributions for distribution-averaged quantities.
#[derive(Debug, Clone)]
pub enum PiSampler {
    /// Standard Gaussian on `R^dim`.
    StandardGaussian { dim: usize },
    /// Uniform on an axis-aligned box.
    UniformBox(SampleBox),
}

impl PiSampler {
    pub fn dim(&self) -> usize {
        match self {
            Self::StandardGaussian { dim } => *dim,
            Self::UniformBox(b) => b.dim(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Self::StandardGaussian { dim } => {
                DVector::from_iterator(*dim, (0..*dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
            }
            Self::UniformBox(b) => b.sample(rng),
        }
    }
}

// Stream tags separating the independent uses of a base seed.
const TAG_INITIAL_DRAW: u64 = 0x5049;
const TAG_INNER: u64 = 0x494E;
const TAG_REFERENCE: u64 = 0x5245;

/// Distribution-averaged conditional variance of the readout: outer average
/// over `x ~ pi` of the unbiased inner sample variance of `<alpha, X_T>`.
pub fn estimate_readout_variance(
    model: &NeuralSdeModel,
    sampler: &PiSampler,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_outer < 2 || n_inner < 2 {
        return Err(Error::InvalidParameter(
            "variance estimation needs at least two outer and two inner samples".into(),
        ));
    }
    if sampler.dim() != model.dim() {
        return Err(Error::InvalidParameter("sampler dimension mismatch".into()));
    }
    let variances: Vec<f64> = (0..n_outer)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed ^ TAG_INITIAL_DRAW, j as u64));
            let x = sampler.sample(&mut rng);
            let inner_seed = derive_seed(seed ^ TAG_INNER, j as u64);
            let readouts: Vec<f64> = sample_endpoints(model, &x, n_inner, inner_seed)?
                .iter()
                .map(|e| model.readout_of(e))
                .collect();
            let (_, var) = mean_variance(&readouts);
            Ok(var)
        })
        .collect::<Result<_>>()?;
    McEstimate::from_samples(&variances, seed)
}

/// Reference function for the rate experiment.
pub enum ReadoutReference<'a> {
    /// Exact `F(x)`, e.g. the linear closed form `<alpha, e^{TA} x>`.
    ClosedForm(&'a (dyn Fn(&DVector<f64>) -> f64 + Sync)),
    /// Pilot Monte Carlo estimate with `factor * max(n_list)` samples.
    Pilot { factor: usize },
}

/// One row of the rate experiment: sample size, mean squared error, and the
/// standard error of the MSE estimate.
#[derive(Debug, Clone)]
pub struct RatePoint {
    pub samples: usize,
    pub mse: f64,
    pub standard_error: f64,
}

/// Result of the rate experiment with the fitted log-log slope.
#[derive(Debug, Clone)]
pub struct RateTable {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log mse` vs `log n`; the i.i.d. sampling law
    /// predicts -1.
    pub slope: f64,
    pub intercept: f64,
    pub seed: u64,
    pub repetitions: usize,
}

/// Monte Carlo estimate of `E || F - F_N ||^2` (squared L2 error against the
/// initial-condition distribution) for each sample size in `n_list`.
///
/// Each repetition draws a fresh `x ~ pi`, simulates `max(n_list)` endpoints
/// once, and evaluates every `F_N` on the first `N` of them, so errors across
/// sample sizes share randomness (common random numbers); each row is still
/// unbiased for its own `N`.
pub fn maurey_rate_experiment(
    model: &NeuralSdeModel,
    sampler: &PiSampler,
    n_list: &[usize],
    repetitions: usize,
    seed: u64,
    reference: &ReadoutReference<'_>,
) -> Result<RateTable> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "sample sizes must be strictly increasing and nonempty".into(),
        ));
    }
    if n_list[0] == 0 {
        return Err(Error::InvalidParameter("sample sizes must be positive".into()));
    }
    if repetitions < 2 {
        return Err(Error::InvalidParameter("need at least two repetitions".into()));
    }
    if sampler.dim() != model.dim() {
        return Err(Error::InvalidParameter("sampler dimension mismatch".into()));
    }
    let n_max = *n_list.last().unwrap();

    // squared_errors[rep][idx] for n_list[idx].
    let squared_errors: Vec<Vec<f64>> = (0..repetitions)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed ^ TAG_INITIAL_DRAW, rep as u64));
            let x = sampler.sample(&mut rng);
            let reference_value = match reference {
                ReadoutReference::ClosedForm(f) => f(&x),
                ReadoutReference::Pilot { factor } => {
                    let pilot_seed = derive_seed(seed ^ TAG_REFERENCE, rep as u64);
                    estimate_readout(model, &x, factor.max(1) * n_max, pilot_seed)?.mean
                }
            };
            let endpoint_seed = derive_seed(seed ^ TAG_INNER, rep as u64);
            let readouts: Vec<f64> = sample_endpoints(model, &x, n_max, endpoint_seed)?
                .iter()
                .map(|e| model.readout_of(e))
                .collect();
            let mut prefix_sum = 0.0;
            let mut next = n_list.iter();
            let mut target = *next.next().unwrap();
            let mut errors = Vec::with_capacity(n_list.len());
            for (count, r) in readouts.iter().enumerate() {
                prefix_sum += r;
                if count + 1 == target {
                    let estimate = prefix_sum / target as f64;
                    let err = reference_value - estimate;
                    errors.push(err * err);
                    match next.next() {
                        Some(t) => target = *t,
                        None => break,
                    }
                }
            }
            Ok(errors)
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let column: Vec<f64> = squared_errors.iter().map(|row| row[idx]).collect();
        let (mean, variance) = mean_variance(&column);
        points.push(RatePoint {
            samples: n,
            mse: mean,
            standard_error: (variance / repetitions as f64).sqrt(),
        });
    }

    let (slope, intercept) = log_log_fit(&points)?;
    Ok(RateTable {
        points,
        slope,
        intercept,
        seed,
        repetitions,
    })
}

fn log_log_fit(points: &[RatePoint]) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.mse > 0.0)
        .map(|p| ((p.samples as f64).ln(), p.mse.ln()))
        .collect();
    if pairs.len() < 2 {
        // Degenerate (e.g. a zero readout makes every error vanish): report a
        // flat fit rather than failing the experiment.
        return Ok((0.0, f64::NEG_INFINITY));
    }
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::Numeric("degenerate abscissa in log-log fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

/// Constants of the variance upper bound that the underlying density theory
/// leaves implicit. The defaults (1, 1) are illustrative placeholders, not
/// certified values; [`SheuConstants::is_illustrative`] flags them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheuConstants {
    pub k2: f64,
    pub c2: f64,
}

impl Default for SheuConstants {
    fn default() -> Self {
        Self { k2: 1.0, c2: 1.0 }
    }
}

impl SheuConstants {
    pub fn is_illustrative(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k2 > 0.0) || !(self.c2 > 0.0) {
            return Err(Error::InvalidParameter(
                "variance-bound constants must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form upper bound on the distribution-averaged readout variance:
///
/// `k2 |alpha|^2 (lambda_max s / (c2 lambda_min T))^{d/2}
///  (lambda_max d s / c2 + int |phi_T(x)|^2 pi(dx))`
///
/// where `s` must upper-bound the stability integral and
/// `flow_second_moment` is the distribution average of `|phi_T|^2`.
pub fn vpi_upper_bound(
    model: &NeuralSdeModel,
    stability: f64,
    flow_second_moment: f64,
    constants: &SheuConstants,
) -> Result<f64> {
    constants.validate()?;
    if !(stability > 0.0) {
        return Err(Error::InvalidParameter("stability value must be positive".into()));
    }
    if flow_second_moment < 0.0 {
        return Err(Error::InvalidParameter("flow second moment must be >= 0".into()));
    }
    let d = model.dim() as f64;
    let l0 = model.system.lambda_min();
    let l1 = model.system.lambda_max();
    let alpha_sq = model.readout.norm_squared();
    let shape = (l1 * stability / (constants.c2 * l0 * model.horizon)).powf(d / 2.0);
    Ok(constants.k2 * alpha_sq * shape * (l1 * d * stability / constants.c2 + flow_second_moment))
}

/// Monte Carlo estimate of the distribution average of `|phi_T(x)|^2`, the
/// second moment of the autonomous flow endpoint under `pi`.
pub fn flow_second_moment(
    sys: &ControlAffineSystem,
    horizon: f64,
    flow_steps: usize,
    sampler: &PiSampler,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if sampler.dim() != sys.dim() {
        return Err(Error::InvalidParameter("sampler dimension mismatch".into()));
    }
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed ^ TAG_INITIAL_DRAW, j as u64));
            let x = sampler.sample(&mut rng);
            Ok(flow(sys, &x, horizon, flow_steps)?.final_state().norm_squared())
        })
        .collect::<Result<_>>()?;
    McEstimate::from_samples(&samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearParams, RnnParams};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn brownian_model(d: usize, horizon: f64, steps: usize) -> NeuralSdeModel {
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::zeros(d, d),
            DMatrix::identity(d, d),
        ))
        .unwrap();
        NeuralSdeModel::new(sys, DVector::from_element(d, 1.0), horizon, steps).unwrap()
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, 0));
    }

    #[test]
    fn endpoint_is_deterministic_in_the_seed() {
        let model = brownian_model(2, 1.0, 32);
        let x = DVector::zeros(2);
        let a = em_endpoint(&model, &x, 99).unwrap();
        let b = em_endpoint(&model, &x, 99).unwrap();
        assert_eq!(a, b);
        let c = em_endpoint(&model, &x, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn brownian_endpoint_moments() {
        // f = 0, g = I: the endpoint is x + N(0, T I).
        let horizon = 0.7;
        let model = brownian_model(2, horizon, 16);
        let x = DVector::from_row_slice(&[1.0, -1.0]);
        let n = 20_000;
        let endpoints = sample_endpoints(&model, &x, n, 7).unwrap();
        let mut mean = DVector::zeros(2);
        for e in &endpoints {
            mean += e;
        }
        mean /= n as f64;
        let se = (horizon / n as f64).sqrt();
        assert!((mean - &x).norm() < 4.0 * se * 2.0_f64.sqrt());

        let mut cov = DMatrix::zeros(2, 2);
        for e in &endpoints {
            let c = e - &x;
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        // Var of a chi^2-ish entry is ~2T^2/n; 3-sigma band.
        let band = 3.0 * (2.0 * horizon * horizon / n as f64).sqrt();
        assert!((cov[(0, 0)] - horizon).abs() < band);
        assert!((cov[(1, 1)] - horizon).abs() < band);
        assert!(cov[(0, 1)].abs() < band);
    }

    #[test]
    fn readout_estimate_of_brownian_motion() {
        // F(x) = <alpha, x> and var = |alpha|^2 T for f = 0, g = I.
        let horizon = 0.5;
        let model = brownian_model(2, horizon, 32);
        let x = DVector::from_row_slice(&[0.3, -0.8]);
        let est = estimate_readout(&model, &x, 20_000, 3).unwrap();
        let expected = model.readout.dot(&x);
        assert!((est.mean - expected).abs() < 3.0 * est.standard_error);
        let var_expected = model.readout.norm_squared() * horizon;
        assert!((est.variance - var_expected).abs() / var_expected < 0.1);
    }

    #[test]
    fn zero_readout_gives_zero_estimate() {
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        ))
        .unwrap();
        let model = NeuralSdeModel::new(sys, DVector::zeros(2), 1.0, 8).unwrap();
        let est = estimate_readout(&model, &DVector::zeros(2), 100, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.variance, 0.0);
    }

    #[test]
    fn small_noise_endpoint_approaches_the_flow() {
        let p = RnnParams::new(1.0, DMatrix::from_row_slice(1, 1, &[0.5]), 1e-4);
        let sys = ControlAffineSystem::from_rnn(&p).unwrap();
        let model = NeuralSdeModel::new(sys.clone(), DVector::from_element(1, 1.0), 1.0, 4000).unwrap();
        let x = DVector::from_row_slice(&[0.7]);
        let endpoint = em_endpoint(&model, &x, 5).unwrap();
        let deterministic = flow(&sys, &x, 1.0, 4000).unwrap().final_state().clone();
        assert!((endpoint - deterministic).norm() < 1e-3);
    }

    #[test]
    fn variance_estimate_matches_brownian_closed_form() {
        let horizon = 0.8;
        let model = brownian_model(1, horizon, 16);
        let sampler = PiSampler::StandardGaussian { dim: 1 };
        let est = estimate_readout_variance(&model, &sampler, 64, 256, 11).unwrap();
        let expected = model.readout.norm_squared() * horizon;
        assert!(
            (est.mean - expected).abs() < 3.0 * est.standard_error,
            "got {} expected {expected} (se {})",
            est.mean,
            est.standard_error
        );
    }

    #[test]
    fn rate_experiment_recovers_inverse_n() {
        let model = brownian_model(1, 1.0, 8);
        let sampler = PiSampler::StandardGaussian { dim: 1 };
        let closed_form = |x: &DVector<f64>| x[0];
        let table = maurey_rate_experiment(
            &model,
            &sampler,
            &[8, 16, 32, 64, 128],
            80,
            21,
            &ReadoutReference::ClosedForm(&closed_form),
        )
        .unwrap();
        assert!(
            (table.slope + 1.0).abs() < 0.2,
            "slope {} should be near -1",
            table.slope
        );
        // n * mse should be roughly the conditional variance T = 1.
        for p in &table.points {
            let scaled = p.mse * p.samples as f64;
            assert!(
                (scaled - 1.0).abs() < 3.0 * p.standard_error * p.samples as f64 + 0.15,
                "n*mse = {scaled} at n = {}",
                p.samples
            );
        }
    }

    #[test]
    fn rate_experiment_rejects_bad_input() {
        let model = brownian_model(1, 1.0, 8);
        let sampler = PiSampler::StandardGaussian { dim: 1 };
        let f = |_: &DVector<f64>| 0.0;
        let reference = ReadoutReference::ClosedForm(&f);
        assert!(maurey_rate_experiment(&model, &sampler, &[8, 8], 10, 0, &reference).is_err());
        assert!(maurey_rate_experiment(&model, &sampler, &[], 10, 0, &reference).is_err());
        assert!(maurey_rate_experiment(&model, &sampler, &[8, 16], 1, 0, &reference).is_err());
    }

    #[test]
    fn vpi_bound_trivial_evaluation() {
        // k2 = c2 = 1, f = 0, g = I: bound is |alpha|^2 (d T + second moment).
        let horizon = 2.0;
        let model = brownian_model(3, horizon, 8);
        let second_moment = 1.5;
        let bound =
            vpi_upper_bound(&model, horizon, second_moment, &SheuConstants::default()).unwrap();
        let alpha_sq = model.readout.norm_squared();
        assert_relative_eq!(bound, alpha_sq * (3.0 * horizon + second_moment), epsilon = 1e-12);
    }

    #[test]
    fn vpi_bound_zero_readout_is_zero() {
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        ))
        .unwrap();
        let model = NeuralSdeModel::new(sys, DVector::zeros(2), 1.0, 8).unwrap();
        let bound = vpi_upper_bound(&model, 1.0, 0.0, &SheuConstants::default()).unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn vpi_bound_rejects_nonpositive_constants() {
        let model = brownian_model(1, 1.0, 4);
        let bad = SheuConstants { k2: 0.0, c2: 1.0 };
        assert!(vpi_upper_bound(&model, 1.0, 0.0, &bad).is_err());
    }

    #[test]
    fn vpi_bound_stays_finite_for_contracting_drift() {
        // 1-d Ornstein-Uhlenbeck: the stability integral is bounded by
        // 1/(2|M|) uniformly in the horizon, so the bound cannot blow up.
        let p = LinearParams::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::identity(1, 1),
        );
        let sys = ControlAffineSystem::from_linear(&p).unwrap();
        let mut previous = f64::INFINITY;
        for horizon in [1.0, 10.0, 100.0] {
            let model =
                NeuralSdeModel::new(sys.clone(), DVector::from_element(1, 1.0), horizon, 8).unwrap();
            let stability = crate::flow::stability_bound(-1.0, horizon);
            assert!(stability <= 0.5 + 1e-12);
            let bound = vpi_upper_bound(&model, stability, 0.25, &SheuConstants::default()).unwrap();
            assert!(bound.is_finite());
            assert!(bound <= previous + 1e-12, "bound should not grow with the horizon");
            previous = bound;
        }
    }

    #[test]
    fn flow_second_moment_of_identity_flow() {
        // f = 0: phi_T = id, so the moment is E|x|^2 = dim for a standard
        // Gaussian.
        let sys = ControlAffineSystem::from_linear(&LinearParams::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        ))
        .unwrap();
        let sampler = PiSampler::StandardGaussian { dim: 2 };
        let est = flow_second_moment(&sys, 1.0, 10, &sampler, 4000, 17).unwrap();
        assert!((est.mean - 2.0).abs() < 3.0 * est.standard_error);
    }

    #[test]
    fn estimates_are_thread_count_independent() {
        let model = brownian_model(2, 1.0, 16);
        let x = DVector::zeros(2);
        let baseline = estimate_readout(&model, &x, 500, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| estimate_readout(&model, &x, 500, 5).unwrap());
        assert_eq!(baseline, threaded);
    }
}
