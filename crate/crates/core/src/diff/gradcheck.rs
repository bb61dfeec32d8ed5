use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference gradient checker.
///
/// The objective is a scalar function of a flat parameter vector, usually the
/// inner product of an operation's output with a fixed [`projection`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Check only this many randomly chosen coordinates.
    pub coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            coords: None,
            seed: 0,
        }
    }
}

impl GradCheck {
    pub fn sampled(coords: usize, seed: u64) -> Self {
        Self {
            coords: Some(coords),
            seed,
            ..Self::default()
        }
    }

    /// Coordinates that [`GradCheck::max_rel_error`] will probe for a vector of length `len`.
    pub fn coordinates(&self, len: usize) -> Vec<usize> {
        match self.coords {
            Some(k) if k < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut idx = sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    }

    /// Largest per-coordinate relative deviation between `analytic` and the
    /// central-difference estimate. Coordinates whose gradient is negligible
    /// against the largest analytic entry are compared against that scale
    /// (1e-3 of the max) instead of their own magnitude.
    pub fn max_rel_error(
        &self,
        mut objective: impl FnMut(&[f64]) -> f64,
        point: &[f64],
        analytic: &[f64],
    ) -> f64 {
        assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = 1e-3 * scale + 1e-12;
        let mut p = point.to_vec();
        let mut worst = 0.0f64;
        for i in self.coordinates(point.len()) {
            let orig = p[i];
            p[i] = orig + self.h;
            let fp = objective(&p);
            p[i] = orig - self.h;
            let fm = objective(&p);
            p[i] = orig;
            let numeric = (fp - fm) / (2.0 * self.h);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }
}

/// Fixed pseudo-random output weighting in `[-1, 1)`.
pub fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a0e);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let c = projection(10, 1);
        let x = projection(10, 2);
        let err = GradCheck::default().max_rel_error(
            |p| p.iter().zip(&c).map(|(a, b)| a * b).sum(),
            &x,
            &c,
        );
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = [1.0, 2.0];
        let err = GradCheck::default().max_rel_error(|p| p[0] * p[0] + p[1], &x, &[2.0, 2.0]);
        assert!(err > 0.4);
    }

    #[test]
    fn sampled_coordinates_are_distinct_and_deterministic() {
        let g = GradCheck::sampled(10, 3);
        let a = g.coordinates(100);
        assert_eq!(a, g.coordinates(100));
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
    }
}
