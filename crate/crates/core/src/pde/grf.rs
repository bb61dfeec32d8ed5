use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{fft2_inverse, half_width, ComplexTensor, Tensor};

/// Mean-zero Gaussian random field on the periodic unit square with
/// covariance `sigma^2 (-Laplacian + tau^2)^(-alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrfSpec {
    pub resolution: usize,
    pub tau: f64,
    pub alpha: f64,
    /// Amplitude factor on the standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            tau: 3.0,
            alpha: 2.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl GrfSpec {
    pub fn new(resolution: usize, seed: u64) -> Self {
        Self {
            resolution,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config(format!(
                "GRF resolution {} is below 8",
                self.resolution
            )));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::Config(format!(
                "GRF alpha {} must exceed 1",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "GRF tau {} and sigma {} must be positive",
                self.tau, self.sigma
            )));
        }
        Ok(())
    }

    /// Variance of the Fourier coefficient at integer wavenumber `(k1, k2)`.
    pub fn eigenvalue(&self, k1: f64, k2: f64) -> f64 {
        let lap = 4.0 * PI * PI * (k1 * k1 + k2 * k2);
        self.sigma * self.sigma * (lap + self.tau * self.tau).powf(-self.alpha)
    }
}

/// Signed frequency of DFT index `k` on an `n`-point axis.
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Draws one `[n, n]` sample.
///
/// Coefficients are independent complex normals scaled by the square root of
/// the eigenvalue; self-conjugate cells get a real draw and the mirrored cells
/// of the DC and Nyquist columns copy the conjugate of their partner.
pub fn grf_sample(spec: &GrfSpec) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.resolution;
    let w2 = half_width(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = (n * n) as f64;
    let mut coef = vec![Complex64::new(0.0, 0.0); n * w2];
    for k1 in 0..n {
        for k2 in 0..w2 {
            let lambda = spec.eigenvalue(signed_freq(k1, n), k2 as f64);
            let self_col = k2 == 0 || (n % 2 == 0 && k2 == n / 2);
            let partner = (n - k1) % n;
            coef[k1 * w2 + k2] = if self_col && partner == k1 {
                let z: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(z * lambda.sqrt() * scale, 0.0)
            } else if self_col && partner < k1 {
                coef[partner * w2 + k2].conj()
            } else {
                let (a, b): (f64, f64) = (
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                Complex64::new(a, b) * ((lambda / 2.0).sqrt() * scale)
            };
        }
    }
    fft2_inverse(&ComplexTensor::new(vec![n, w2], coef)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_field() {
        let s = GrfSpec::new(16, 4);
        assert_eq!(grf_sample(&s).unwrap(), grf_sample(&s).unwrap());
        let other = GrfSpec { seed: 5, ..s };
        assert_ne!(
            grf_sample(&GrfSpec::new(16, 4)).unwrap(),
            grf_sample(&other).unwrap()
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(grf_sample(&GrfSpec::new(4, 0)).is_err());
        let s = GrfSpec {
            alpha: 1.0,
            ..GrfSpec::new(16, 0)
        };
        assert!(grf_sample(&s).is_err());
    }

    #[test]
    fn odd_resolution_is_real_and_finite() {
        let g = grf_sample(&GrfSpec::new(9, 1)).unwrap();
        assert_eq!(g.shape(), &[9, 9]);
        assert!(g.all_finite());
    }
}
