use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use super::{ComplexTensor, Tensor};
use crate::error::{shape_err, Result};

// Planners cache plans per thread; nothing here is shared across threads.
struct Plans {
    real: RealFftPlanner<f64>,
    complex: FftPlanner<f64>,
}

thread_local! {
    static PLANS: RefCell<Plans> = RefCell::new(Plans {
        real: RealFftPlanner::new(),
        complex: FftPlanner::new(),
    });
}

fn forward_plans(h: usize, w: usize) -> (Arc<dyn RealToComplex<f64>>, Arc<dyn Fft<f64>>) {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        (p.real.plan_fft_forward(w), p.complex.plan_fft_forward(h))
    })
}

fn inverse_plans(h: usize, w: usize) -> (Arc<dyn ComplexToReal<f64>>, Arc<dyn Fft<f64>>) {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        (p.real.plan_fft_inverse(w), p.complex.plan_fft_inverse(h))
    })
}

/// Number of stored columns of a half-spectrum for a real field of width `w`.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Real-input 2-D DFT over the last two axes.
///
/// Unnormalised (`X[0,0]` is the field sum); only columns `0..=W/2` are stored.
pub fn fft2_forward(field: &Tensor) -> Result<ComplexTensor> {
    let (h, w) = field.spatial()?;
    let w2 = half_width(w);
    let batch = field.len() / (h * w);
    let (r2c, col_fft) = forward_plans(h, w);

    let mut out = vec![ZERO; batch * h * w2];
    let mut row = vec![0.0; w];
    let mut row_scratch = r2c.make_scratch_vec();
    let mut cols = vec![ZERO; w2 * h];
    let mut col_scratch = vec![ZERO; col_fft.get_inplace_scratch_len()];

    for b in 0..batch {
        let src = &field.data()[b * h * w..(b + 1) * h * w];
        let dst = &mut out[b * h * w2..(b + 1) * h * w2];
        for i in 0..h {
            row.copy_from_slice(&src[i * w..(i + 1) * w]);
            r2c.process_with_scratch(&mut row, &mut dst[i * w2..(i + 1) * w2], &mut row_scratch)
                .expect("buffer lengths match the plan");
        }
        for i in 0..h {
            for k in 0..w2 {
                cols[k * h + i] = dst[i * w2 + k];
            }
        }
        col_fft.process_with_scratch(&mut cols, &mut col_scratch);
        for i in 0..h {
            for k in 0..w2 {
                dst[i * w2 + k] = cols[k * h + i];
            }
        }
    }

    let mut shape = field.shape().to_vec();
    *shape.last_mut().expect("rank >= 2") = w2;
    ComplexTensor::new(shape, out)
}

/// Inverse of [`fft2_forward`], scaled by `1/(H*W)`.
///
/// The imaginary parts of the DC and Nyquist columns after the row-axis
/// transform are discarded, so the map is real-linear in the half-spectrum.
pub fn fft2_inverse(spec: &ComplexTensor, width: usize) -> Result<Tensor> {
    let shape = spec.shape();
    if shape.len() < 2 {
        return Err(shape_err!("expected at least two axes, got {shape:?}"));
    }
    let h = shape[shape.len() - 2];
    let w2 = shape[shape.len() - 1];
    if width == 0 || half_width(width) != w2 {
        return Err(shape_err!(
            "half-spectrum has {w2} columns, width {width} needs {}",
            half_width(width)
        ));
    }
    let w = width;
    let batch = spec.len() / (h * w2);
    let (c2r, col_ifft) = inverse_plans(h, w);
    let norm = 1.0 / (h * w) as f64;

    let mut out = vec![0.0; batch * h * w];
    let mut cols = vec![ZERO; w2 * h];
    let mut col_scratch = vec![ZERO; col_ifft.get_inplace_scratch_len()];
    let mut row = vec![ZERO; w2];
    let mut row_scratch = c2r.make_scratch_vec();

    for b in 0..batch {
        let src = &spec.data()[b * h * w2..(b + 1) * h * w2];
        for i in 0..h {
            for k in 0..w2 {
                cols[k * h + i] = src[i * w2 + k];
            }
        }
        col_ifft.process_with_scratch(&mut cols, &mut col_scratch);
        let dst = &mut out[b * h * w..(b + 1) * h * w];
        for i in 0..h {
            for k in 0..w2 {
                row[k] = cols[k * h + i];
            }
            row[0].im = 0.0;
            if w % 2 == 0 {
                row[w2 - 1].im = 0.0;
            }
            let out_row = &mut dst[i * w..(i + 1) * w];
            c2r.process_with_scratch(&mut row, out_row, &mut row_scratch)
                .expect("buffer lengths match the plan");
            for v in out_row.iter_mut() {
                *v *= norm;
            }
        }
    }

    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().expect("rank >= 2") = w;
    Tensor::new(out_shape, out)
}

/// Direct double-sum DFT of a 2-D field, full spectrum, unnormalised.
pub fn dft2_reference(field: &Tensor) -> Result<ComplexTensor> {
    let [h, w] = field.shape()[..] else {
        return Err(shape_err!("expected [H, W], got {:?}", field.shape()));
    };
    let x = field.data();
    let mut out = vec![ZERO; h * w];
    for k1 in 0..h {
        for k2 in 0..w {
            let mut acc = ZERO;
            for i in 0..h {
                for j in 0..w {
                    // reduce the phase exactly in integers before scaling
                    let p1 = (k1 * i) % h;
                    let p2 = (k2 * j) % w;
                    let theta = -2.0 * PI * (p1 as f64 / h as f64 + p2 as f64 / w as f64);
                    acc += Complex64::from_polar(x[i * w + j], theta);
                }
            }
            out[k1 * w + k2] = acc;
        }
    }
    ComplexTensor::new(vec![h, w], out)
}

/// Expands a half-spectrum to the full `[..., H, W]` spectrum via conjugate symmetry.
pub fn full_spectrum(half: &ComplexTensor, width: usize) -> Result<ComplexTensor> {
    let shape = half.shape();
    if shape.len() < 2 || half_width(width) != shape[shape.len() - 1] {
        return Err(shape_err!(
            "half-spectrum {shape:?} does not match width {width}"
        ));
    }
    let h = shape[shape.len() - 2];
    let w2 = shape[shape.len() - 1];
    let w = width;
    let batch = half.len() / (h * w2);
    let mut out = vec![ZERO; batch * h * w];
    for b in 0..batch {
        let src = &half.data()[b * h * w2..];
        let dst = &mut out[b * h * w..(b + 1) * h * w];
        for k1 in 0..h {
            for k2 in 0..w {
                dst[k1 * w + k2] = if k2 < w2 {
                    src[k1 * w2 + k2]
                } else {
                    src[((h - k1) % h) * w2 + (w - k2)].conj()
                };
            }
        }
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().expect("rank >= 2") = w;
    ComplexTensor::new(out_shape, out)
}

/// Centre-shifted `ln(1 + |X|)` over the full spectrum; DC lands at `(H/2, W/2)`.
pub fn spectrum_logmag(field: &Tensor) -> Result<Tensor> {
    let [h, w] = field.shape()[..] else {
        return Err(shape_err!("expected [H, W], got {:?}", field.shape()));
    };
    let full = full_spectrum(&fft2_forward(field)?, w)?;
    let mut out = vec![0.0; h * w];
    for k1 in 0..h {
        for k2 in 0..w {
            let r = (k1 + h / 2) % h;
            let c = (k2 + w / 2) % w;
            out[r * w + c] = full.data()[k1 * w + k2].norm().ln_1p();
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Trigonometric interpolation of a band-limited field onto a finer grid.
///
/// Nyquist rows/columns of the source are dropped, so the result is exact only
/// for fields without energy there.
pub fn spectral_upsample(field: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (h, w) = field.spatial()?;
    if new_h < h || new_w < w {
        return Err(shape_err!(
            "cannot upsample {h}x{w} onto smaller grid {new_h}x{new_w}"
        ));
    }
    let spec = fft2_forward(field)?;
    let w2 = half_width(w);
    let nw2 = half_width(new_w);
    let batch = field.len() / (h * w);
    let scale = (new_h * new_w) as f64 / (h * w) as f64;
    let mut out = vec![ZERO; batch * new_h * nw2];
    for b in 0..batch {
        let src = &spec.data()[b * h * w2..];
        let dst = &mut out[b * new_h * nw2..];
        for k1 in 0..h {
            if h % 2 == 0 && k1 == h / 2 {
                continue;
            }
            let row = if k1 <= h / 2 { k1 } else { new_h - (h - k1) };
            for k2 in 0..w2 {
                if w % 2 == 0 && k2 == w / 2 {
                    continue;
                }
                dst[row * nw2 + k2] = src[k1 * w2 + k2] * scale;
            }
        }
    }
    let mut shape = field.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = new_h;
    shape[n - 1] = nw2;
    fft2_inverse(&ComplexTensor::new(shape, out)?, new_w)
}
