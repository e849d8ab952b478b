//! Empirical transition densities (dimension 1 or 2) by endpoint histogram,
//! and the qualitative log-density vs. minimum-action check: bins are
//! unbiased per-bin estimators with standard errors computable from counts,
//! and for well-behaved systems the log of the empirical density should fall
//! off affinely in the numeric minimum action of the probe point.

use nalgebra::DVector;

use crate::action::{solve_min_action, SolveOptions};
use crate::error::{Error, Result};
use crate::mc::{derive_seed, sample_endpoints, NeuralSdeModel};
use crate::sampling::SampleBox;

/// Fraction of out-of-box samples above which a histogram is flagged.
pub const OUTSIDE_WARN_FRACTION: f64 = 0.05;

/// Histogram estimate of an endpoint density on an axis-aligned box with the
/// same number of bins per axis.
#[derive(Debug, Clone)]
pub struct DensityHistogram {
    region: SampleBox,
    bins_per_axis: usize,
    counts: Vec<u64>,
    total_samples: u64,
    outside_samples: u64,
    densities: Vec<f64>,
}

impl DensityHistogram {
    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn region(&self) -> &SampleBox {
        &self.region
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins_per_axis
    }

    /// Bin counts in row-major order (last axis fastest).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Normalized density values (probability per unit volume) per bin.
    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    /// Fraction of samples that fell outside the box.
    pub fn outside_fraction(&self) -> f64 {
        if self.total_samples == 0 {
            0.0
        } else {
            self.outside_samples as f64 / self.total_samples as f64
        }
    }

    /// True when more than [`OUTSIDE_WARN_FRACTION`] of samples missed the box.
    pub fn outside_warning(&self) -> bool {
        self.outside_fraction() > OUTSIDE_WARN_FRACTION
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.dim())
            .map(|axis| self.axis_width(axis) / self.bins_per_axis as f64)
            .product()
    }

    fn axis_width(&self, axis: usize) -> f64 {
        self.region.upper()[axis] - self.region.lower()[axis]
    }

    /// Flat index of the bin containing `y`, if inside the box.
    pub fn bin_index(&self, y: &DVector<f64>) -> Option<usize> {
        if y.len() != self.dim() || !self.region.contains(y) {
            return None;
        }
        let mut idx = 0;
        for axis in 0..self.dim() {
            let width = self.axis_width(axis) / self.bins_per_axis as f64;
            let offset = ((y[axis] - self.region.lower()[axis]) / width) as usize;
            let offset = offset.min(self.bins_per_axis - 1);
            idx = idx * self.bins_per_axis + offset;
        }
        Some(idx)
    }

    /// Density of the bin containing `y`.
    pub fn density_at(&self, y: &DVector<f64>) -> Option<f64> {
        self.bin_index(y).map(|i| self.densities[i])
    }

    /// Center of a bin given its flat index.
    pub fn bin_center(&self, mut index: usize) -> DVector<f64> {
        let d = self.dim();
        let mut coords = vec![0.0; d];
        for axis in (0..d).rev() {
            let offset = index % self.bins_per_axis;
            index /= self.bins_per_axis;
            let width = self.axis_width(axis) / self.bins_per_axis as f64;
            coords[axis] = self.region.lower()[axis] + (offset as f64 + 0.5) * width;
        }
        DVector::from_vec(coords)
    }

    /// Total probability mass inside the box: `sum density * volume`, which
    /// equals the fraction of samples captured (at most one).
    pub fn mass(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_volume()
    }
}

/// Histogram of Euler-Maruyama endpoints started at `x`.
pub fn estimate_density(
    model: &NeuralSdeModel,
    x: &DVector<f64>,
    n_samples: usize,
    region: &SampleBox,
    bins_per_axis: usize,
    seed: u64,
) -> Result<DensityHistogram> {
    if model.dim() > 2 {
        return Err(Error::InvalidParameter(
            "histogram density estimation is limited to dimensions 1 and 2".into(),
        ));
    }
    if region.dim() != model.dim() {
        return Err(Error::InvalidParameter("histogram box dimension mismatch".into()));
    }
    if bins_per_axis < 8 {
        return Err(Error::InvalidParameter("need at least 8 bins per axis".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let total_bins = bins_per_axis.pow(model.dim() as u32);
    let mut hist = DensityHistogram {
        region: region.clone(),
        bins_per_axis,
        counts: vec![0; total_bins],
        total_samples: n_samples as u64,
        outside_samples: 0,
        densities: vec![0.0; total_bins],
    };
    for endpoint in sample_endpoints(model, x, n_samples, seed)? {
        match hist.bin_index(&endpoint) {
            Some(i) => hist.counts[i] += 1,
            None => hist.outside_samples += 1,
        }
    }
    let norm = 1.0 / (n_samples as f64 * hist.bin_volume());
    for (d, c) in hist.densities.iter_mut().zip(hist.counts.iter()) {
        *d = *c as f64 * norm;
    }
    Ok(hist)
}

/// One probe of the log-density vs. action relationship.
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub target: DVector<f64>,
    /// Log of the empirical density in the probe's bin.
    pub log_density: f64,
    /// Numeric minimum action from the transcription solver.
    pub action: f64,
    /// Endpoint residual of the action solve.
    pub steering_residual: f64,
    /// Residual of this probe against the affine fit.
    pub fit_residual: f64,
}

/// Affine fit of `log p = intercept - slope * action` over the probes.
#[derive(Debug, Clone)]
pub struct SandwichReport {
    /// Fitted decay rate of the density in the action; positive when the
    /// density decreases as the action grows.
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation between log-density and negated action (near +1
    /// when the relationship is tight).
    pub correlation: f64,
    pub probes: Vec<ProbeOutcome>,
    /// Probe targets that landed in empty bins and were excluded.
    pub excluded: Vec<DVector<f64>>,
    /// Histogram the log-densities were read from.
    pub histogram: DensityHistogram,
}

/// For each probe target `y`: read the empirical log-density of its bin and
/// solve the steering problem `x -> y`, then fit `log p = a - b I` by least
/// squares. Probes in zero-count bins are excluded and reported.
#[allow(clippy::too_many_arguments)]
pub fn sheu_sandwich_check(
    model: &NeuralSdeModel,
    x: &DVector<f64>,
    probe_targets: &[DVector<f64>],
    n_samples: usize,
    region: &SampleBox,
    bins_per_axis: usize,
    intervals: usize,
    seed: u64,
    action_opts: &SolveOptions,
) -> Result<SandwichReport> {
    if probe_targets.len() < 2 {
        return Err(Error::InvalidParameter("need at least two probe targets".into()));
    }
    let histogram = estimate_density(model, x, n_samples, region, bins_per_axis, seed)?;

    let mut kept: Vec<(DVector<f64>, f64, f64, f64)> = Vec::new();
    let mut excluded = Vec::new();
    for y in probe_targets {
        let density = histogram.density_at(y).unwrap_or(0.0);
        if density <= 0.0 {
            excluded.push(y.clone());
            continue;
        }
        let cert = solve_min_action(&model.system, x, y, model.horizon, intervals, action_opts)?;
        kept.push((y.clone(), density.ln(), cert.value, cert.endpoint_residual));
    }
    if kept.len() < 2 {
        return Err(Error::Numeric(format!(
            "only {} probes landed in occupied bins; need at least 2",
            kept.len()
        )));
    }

    // Least squares for log p = intercept - slope * action.
    let n = kept.len() as f64;
    let mean_a = kept.iter().map(|k| k.2).sum::<f64>() / n;
    let mean_l = kept.iter().map(|k| k.1).sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sal = 0.0;
    let mut sll = 0.0;
    for (_, log_p, action, _) in &kept {
        let da = action - mean_a;
        let dl = log_p - mean_l;
        saa += da * da;
        sal += da * dl;
        sll += dl * dl;
    }
    if saa < 1e-300 {
        return Err(Error::Numeric("probe actions are all identical; cannot fit".into()));
    }
    let slope = -sal / saa;
    let intercept = mean_l + slope * mean_a;
    let correlation = if sll > 0.0 { -sal / (saa * sll).sqrt() } else { 0.0 };

    let probes = kept
        .into_iter()
        .map(|(target, log_density, action, steering_residual)| ProbeOutcome {
            fit_residual: log_density - (intercept - slope * action),
            target,
            log_density,
            action,
            steering_residual,
        })
        .collect();

    Ok(SandwichReport {
        slope,
        intercept,
        correlation,
        probes,
        excluded,
        histogram,
    })
}

/// Default probe targets: points along rays from the deterministic flow
/// endpoint at radii between 0.5 and 3 empirical standard deviations of the
/// endpoint spread, covering the range where density and action both vary.
pub fn default_probes(
    model: &NeuralSdeModel,
    x: &DVector<f64>,
    count: usize,
    pilot_samples: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::InvalidParameter("probe count must be positive".into()));
    }
    let d = model.dim();
    if d > 2 {
        return Err(Error::InvalidParameter("probes are supported in dimensions 1 and 2".into()));
    }
    let endpoints = sample_endpoints(model, x, pilot_samples.max(16), derive_seed(seed, 0xA11))?;
    let n = endpoints.len() as f64;
    let mut mean = DVector::zeros(d);
    for e in &endpoints {
        mean += e;
    }
    mean /= n;
    let spread = (endpoints.iter().map(|e| (e - &mean).norm_squared()).sum::<f64>() / (n - 1.0))
        .sqrt()
        / (d as f64).sqrt();

    let directions: Vec<DVector<f64>> = if d == 1 {
        vec![
            DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[-1.0]),
        ]
    } else {
        (0..4)
            .map(|k| {
                let angle = std::f64::consts::FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2;
                DVector::from_row_slice(&[angle.cos(), angle.sin()])
            })
            .collect()
    };
    let per_direction = count.div_ceil(directions.len());
    let mut probes = Vec::with_capacity(count);
    'outer: for step in 0..per_direction {
        let radius = if per_direction == 1 {
            1.5
        } else {
            0.5 + 2.5 * step as f64 / (per_direction - 1) as f64
        };
        for dir in &directions {
            if probes.len() == count {
                break 'outer;
            }
            probes.push(&mean + dir * (radius * spread));
        }
    }
    Ok(probes)
}
