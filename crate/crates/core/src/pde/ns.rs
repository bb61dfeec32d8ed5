use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grf::signed_freq;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{fft2_forward, fft2_inverse, half_width, ComplexTensor, Tensor};

/// Solver settings for the periodic vorticity equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Solver steps between stored snapshots.
    pub record_stride: usize,
    /// Amplitude of `sin(2 pi (x + y)) + cos(2 pi (x + y))`; zero disables forcing.
    pub forcing_amplitude: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            dt: 1e-3,
            t_final: 20.0,
            record_stride: 1000,
            forcing_amplitude: 0.1,
        }
    }
}

impl NsConfig {
    /// Number of solver steps to reach `t_final`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.t_final >= 0.0 && self.nu >= 0.0) || self.record_stride == 0 {
            return Err(Error::Config(format!(
                "NS settings need dt > 0, t_final >= 0, nu >= 0 and a positive stride, got {self:?}"
            )));
        }
        let steps = (self.t_final / self.dt).round();
        if (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::Config(format!(
                "t_final {} is not a whole number of steps of {}",
                self.t_final, self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Snapshots stored by a rollout, including the initial state.
    pub fn snapshots(&self) -> Result<usize> {
        Ok(self.steps()? / self.record_stride + 1)
    }
}

/// Vorticity snapshots of one rollout.
#[derive(Clone, Debug)]
pub struct NsTrajectory {
    /// `[T, H, W]`; entry `t` is the state after `t * record_stride` steps.
    pub omega: Tensor,
    pub nu: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub times: Vec<f64>,
}

/// The forcing term sampled on an `n x n` periodic grid.
pub fn ns_forcing(n: usize, amplitude: f64) -> Tensor {
    Tensor::from_fn2(n, n, |i, j| {
        let s = 2.0 * PI * (i as f64 + j as f64) / n as f64;
        amplitude * (s.sin() + s.cos())
    })
}

// Per-cell spectral multipliers on the half-spectrum.
struct Operators {
    n: usize,
    w2: usize,
    // i * 2 pi k for first-derivative along rows / columns, zero on Nyquist
    dx: Vec<f64>,
    dy: Vec<f64>,
    // 4 pi^2 |k|^2
    lap: Vec<f64>,
    dealias: Vec<bool>,
}

impl Operators {
    fn new(n: usize) -> Self {
        let w2 = half_width(n);
        let nyq = |k: usize| n % 2 == 0 && k == n / 2;
        let cut = n as f64 / 3.0;
        let mut ops = Self {
            n,
            w2,
            dx: vec![0.0; n * w2],
            dy: vec![0.0; n * w2],
            lap: vec![0.0; n * w2],
            dealias: vec![false; n * w2],
        };
        for k1 in 0..n {
            let kx = signed_freq(k1, n);
            for k2 in 0..w2 {
                let ky = k2 as f64;
                let c = k1 * w2 + k2;
                ops.dx[c] = if nyq(k1) { 0.0 } else { 2.0 * PI * kx };
                ops.dy[c] = if nyq(k2) { 0.0 } else { 2.0 * PI * ky };
                ops.lap[c] = 4.0 * PI * PI * (kx * kx + ky * ky);
                ops.dealias[c] = kx.abs() <= cut && ky <= cut;
            }
        }
        ops
    }

    // -(u . grad omega), dealiased, in spectral space.
    fn advection(&self, w: &[Complex64]) -> Result<Vec<Complex64>> {
        let (n, m) = (self.n, self.n * self.w2);
        let i = Complex64::new(0.0, 1.0);
        let mut fields = vec![Complex64::new(0.0, 0.0); 4 * m];
        for c in 0..m {
            let psi = if self.lap[c] > 0.0 {
                w[c] / self.lap[c]
            } else {
                Complex64::new(0.0, 0.0)
            };
            fields[c] = i * self.dy[c] * psi;
            fields[m + c] = -i * self.dx[c] * psi;
            fields[2 * m + c] = i * self.dx[c] * w[c];
            fields[3 * m + c] = i * self.dy[c] * w[c];
        }
        let phys = fft2_inverse(&ComplexTensor::new(vec![4, n, self.w2], fields)?, n)?;
        let p = phys.data();
        let nn = n * n;
        let nl: Vec<f64> = (0..nn)
            .map(|k| p[k] * p[2 * nn + k] + p[nn + k] * p[3 * nn + k])
            .collect();
        let mut spec = fft2_forward(&Tensor::new(vec![n, n], nl)?)?.into_data();
        for (s, &keep) in spec.iter_mut().zip(&self.dealias) {
            *s = if keep { -*s } else { Complex64::new(0.0, 0.0) };
        }
        Ok(spec)
    }
}

/// Integrates the vorticity equation on the periodic unit square.
///
/// Viscosity is treated with Crank-Nicolson, advection and forcing with
/// Heun's method; the nonlinear product is formed in physical space and
/// dealiased with the 2/3 rule.
pub fn ns_rollout(omega0: &Tensor, cfg: &NsConfig) -> Result<NsTrajectory> {
    let (n, w) = omega0.spatial()?;
    if omega0.ndim() != 2 || n != w || n < 4 {
        return Err(shape_err!(
            "NS rollout needs a square grid of at least 4x4, got {:?}",
            omega0.shape()
        ));
    }
    let steps = cfg.steps()?;
    let ops = Operators::new(n);
    let m = n * ops.w2;
    let forcing = fft2_forward(&ns_forcing(n, cfg.forcing_amplitude))?.into_data();
    let half = 0.5 * cfg.dt * cfg.nu;
    let explicit: Vec<f64> = ops.lap.iter().map(|l| 1.0 - half * l).collect();
    let implicit: Vec<f64> = ops.lap.iter().map(|l| 1.0 / (1.0 + half * l)).collect();
    let rhs = |w: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut r = ops.advection(w)?;
        for (r, f) in r.iter_mut().zip(&forcing) {
            *r += f;
        }
        Ok(r)
    };

    let mut w = fft2_forward(omega0)?.into_data();
    let mut snaps = vec![omega0.clone()];
    let mut times = vec![0.0];
    let mut pred = vec![Complex64::new(0.0, 0.0); m];
    for step in 1..=steps {
        let f0 = rhs(&w)?;
        for c in 0..m {
            pred[c] = (w[c] * explicit[c] + f0[c] * cfg.dt) * implicit[c];
        }
        let f1 = rhs(&pred)?;
        for c in 0..m {
            w[c] = (w[c] * explicit[c] + (f0[c] + f1[c]) * (0.5 * cfg.dt)) * implicit[c];
        }
        if step % cfg.record_stride == 0 {
            let field = fft2_inverse(&ComplexTensor::new(vec![n, ops.w2], w.clone())?, n)?;
            if !field.all_finite() {
                return Err(Error::Numeric(format!(
                    "NS rollout became non-finite at step {step} (t = {})",
                    step as f64 * cfg.dt
                )));
            }
            snaps.push(field);
            times.push(step as f64 * cfg.dt);
        }
    }
    Ok(NsTrajectory {
        omega: Tensor::stack(&snaps)?,
        nu: cfg.nu,
        dt: cfg.dt,
        record_stride: cfg.record_stride,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_count_includes_initial_state() {
        let cfg = NsConfig {
            t_final: 0.01,
            record_stride: 5,
            ..NsConfig::default()
        };
        assert_eq!(cfg.snapshots().unwrap(), 3);
        let tr = ns_rollout(&Tensor::zeros(&[8, 8]), &cfg).unwrap();
        assert_eq!(tr.omega.shape(), &[3, 8, 8]);
        assert_eq!(tr.times.len(), 3);
    }

    #[test]
    fn rejects_fractional_step_counts() {
        let cfg = NsConfig {
            t_final: 0.0105,
            ..NsConfig::default()
        };
        assert!(cfg.steps().is_err());
    }

    #[test]
    fn forcing_has_zero_mean() {
        assert!(ns_forcing(16, 0.1).sum().abs() < 1e-12);
    }
}
