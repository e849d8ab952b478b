//! Axis-aligned sample regions and space-filling point sets.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

/// An axis-aligned box used as a probe/sampling region.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl SampleBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "sample box bounds must be nonempty and of equal dimension".into(),
            ));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter(
                "sample box requires lower <= upper in every coordinate".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Box centered at `center` extending `halfwidth` in every coordinate.
    pub fn centered(center: &DVector<f64>, halfwidth: f64) -> Result<Self> {
        if halfwidth < 0.0 {
            return Err(Error::InvalidParameter("halfwidth must be >= 0".into()));
        }
        let off = DVector::from_element(center.len(), halfwidth);
        Self::new(center - &off, center + &off)
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        Self::centered(&DVector::zeros(dim), half)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(xi, (l, u))| *xi >= *l && *xi <= *u)
    }

    /// One uniform draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(l, u)| rng.gen_range(*l..=*u)),
        )
    }

    /// `n` uniform draws, taken sequentially from `rng` so that a longer run
    /// extends a shorter one drawn from the same generator state.
    pub fn sample_n<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<DVector<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Latin-hypercube sample: `n` points with one point per axis stratum.
    pub fn latin_hypercube<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let d = self.dim();
        let mut strata: Vec<Vec<usize>> = Vec::with_capacity(d);
        for _ in 0..d {
            let mut perm: Vec<usize> = (0..n).collect();
            // Fisher-Yates
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            strata.push(perm);
        }
        (0..n)
            .map(|i| {
                DVector::from_iterator(
                    d,
                    (0..d).map(|axis| {
                        let cell = strata[axis][i] as f64;
                        let frac = (cell + rng.gen_range(0.0..1.0)) / n as f64;
                        self.lower[axis] + frac * (self.upper[axis] - self.lower[axis])
                    }),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_inverted_bounds() {
        let lo = DVector::from_row_slice(&[0.0, 1.0]);
        let hi = DVector::from_row_slice(&[1.0, 0.0]);
        assert!(SampleBox::new(lo, hi).is_err());
    }

    #[test]
    fn samples_stay_inside() {
        let b = SampleBox::symmetric(3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in b.sample_n(200, &mut rng) {
            assert!(b.contains(&p));
        }
    }

    #[test]
    fn sampling_is_prefix_stable() {
        let b = SampleBox::symmetric(2, 1.0).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let short = b.sample_n(5, &mut rng1);
        let long = b.sample_n(9, &mut rng2);
        for (a, c) in short.iter().zip(long.iter()) {
            assert_eq!(a, c);
        }
    }

    #[test]
    fn latin_hypercube_stratifies_each_axis() {
        let b = SampleBox::symmetric(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let pts = b.latin_hypercube(n, &mut rng);
        assert_eq!(pts.len(), n);
        for axis in 0..2 {
            let mut seen = vec![false; n];
            for p in &pts {
                let frac = (p[axis] + 1.0) / 2.0;
                let cell = ((frac * n as f64) as usize).min(n - 1);
                seen[cell] = true;
            }
            assert!(seen.iter().all(|s| *s), "axis {axis} not stratified");
        }
    }
}
