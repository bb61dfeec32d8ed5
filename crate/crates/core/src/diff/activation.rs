use super::simd::dispatch;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const CUBIC: f64 = 0.044_715;

/// Branch-free `exp` (Cody-Waite reduction, degree-13 Taylor polynomial) that
/// auto-vectorizes; within a couple of ulps of `f64::exp` on `[-708, 708]`,
/// saturating outside.
#[inline(always)]
fn exp_vec(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 708.0);
    let shifted = x * std::f64::consts::LOG2_E + ROUND;
    let k = shifted - ROUND;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for d in [
        479_001_600.0,
        39_916_800.0,
        3_628_800.0,
        362_880.0,
        40_320.0,
        5_040.0,
        720.0,
        120.0,
        24.0,
        6.0,
        2.0,
        1.0,
        1.0,
    ] {
        p = p * r + 1.0 / d;
    }
    // the low mantissa bits of `shifted` hold k in two's complement
    p * f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52)
}

/// `0.5 * (1 + tanh(u)) = 1 / (1 + exp(-2u))`, cheaper than `tanh`.
#[inline(always)]
fn half_one_plus_tanh(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + CUBIC * x * x * x);
    1.0 / (1.0 + exp_vec(-2.0 * u))
}

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    x * half_one_plus_tanh(x)
}

#[inline(always)]
fn gelu_derivative(x: f64) -> f64 {
    let s = half_one_plus_tanh(x);
    s + 2.0 * x * s * (1.0 - s) * SQRT_2_OVER_PI * (1.0 + 3.0 * CUBIC * x * x)
}

dispatch! {
    fn gelu_kernel(x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v * half_one_plus_tanh(v);
        }
    }
}

dispatch! {
    fn gelu_backward_kernel(x: &[f64], g: &[f64], out: &mut [f64]) {
        for ((o, &v), &gv) in out.iter_mut().zip(x).zip(g) {
            *o = gv * gelu_derivative(v);
        }
    }
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.len()];
    gelu_kernel(x.data(), &mut out);
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// `grad_out * gelu'(x)`.
pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(shape_err!(
            "gelu grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        ));
    }
    let mut out = vec![0.0; x.len()];
    gelu_backward_kernel(x.data(), grad_out.data(), &mut out);
    Tensor::new(x.shape().to_vec(), out)
}
