use rand::Rng;

use super::linalg::{gemm_strided, Strided};
use super::param::{ParamSlot, ParamTensor};
use super::uniform_fan_in;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

// Target column count of one im2col chunk; keeps the column matrix in cache.
const CHUNK_COLS: usize = 512;

// Output rows `i0..i1` of one sample as a column matrix: row (c, ky, kx),
// column (i - i0, j) holds x[c, i + ky - 1, j + kx - 1], zero outside the grid.
fn im2col(
    x: &[f64],
    c_in: usize,
    (h, w): (usize, usize),
    (i0, i1): (usize, usize),
    cols: &mut [f64],
) {
    let (hw, nc) = (h * w, (i1 - i0) * w);
    for c in 0..c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = c * 9 + ky * 3 + kx;
                let row = &mut cols[r * nc..(r + 1) * nc];
                let j0 = 1usize.saturating_sub(kx);
                let j1 = (w + 1 - kx).min(w);
                for i in i0..i1 {
                    let dst = &mut row[(i - i0) * w..(i - i0 + 1) * w];
                    let si = i + ky;
                    if si < 1 || si > h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(si - 1) * w..si * w];
                    dst[..j0].fill(0.0);
                    dst[j1..].fill(0.0);
                    dst[j0..j1].copy_from_slice(&src[j0 + kx - 1..j1 + kx - 1]);
                }
            }
        }
    }
}

fn col2im(
    cols: &[f64],
    c_in: usize,
    (h, w): (usize, usize),
    (i0, i1): (usize, usize),
    x: &mut [f64],
) {
    let (hw, nc) = (h * w, (i1 - i0) * w);
    for c in 0..c_in {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = c * 9 + ky * 3 + kx;
                let row = &cols[r * nc..(r + 1) * nc];
                let j0 = 1usize.saturating_sub(kx);
                let j1 = (w + 1 - kx).min(w);
                for i in i0..i1 {
                    let si = i + ky;
                    if si < 1 || si > h {
                        continue;
                    }
                    let dst = &mut plane[(si - 1) * w + j0 + kx - 1..(si - 1) * w + j1 + kx - 1];
                    let src = &row[(i - i0) * w + j0..(i - i0) * w + j1];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn row_chunks(h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = (CHUNK_COLS / w).clamp(1, h);
    (0..h).step_by(step).map(move |i0| (i0, (i0 + step).min(h)))
}

fn check(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, c_in, h, w) = x.dims4()?;
    if h < 3 || w < 3 {
        return Err(shape_err!("conv3x3 needs at least 3x3 grids, got {h}x{w}"));
    }
    match kernel.shape()[..] {
        [c_out, ki, 3, 3] if ki == c_in => Ok((b, c_in, h, w, c_out)),
        _ => Err(shape_err!(
            "kernel {:?} does not accept {c_in} input channels",
            kernel.shape()
        )),
    }
}

/// Zero-padded same-size 3x3 convolution (cross-correlation) of `[B, C_in, H, W]`.
pub fn conv3x3(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, c_in, h, w, c_out) = check(x, kernel)?;
    if bias.shape() != [c_out] {
        return Err(shape_err!("bias {:?} for {c_out} outputs", bias.shape()));
    }
    let (hw, k) = (h * w, c_in * 9);
    let mut cols = vec![0.0; k * CHUNK_COLS.max(w)];
    let mut out = vec![0.0; batch * c_out * hw];
    for b in 0..batch {
        let xb = &x.data()[b * c_in * hw..(b + 1) * c_in * hw];
        let y = &mut out[b * c_out * hw..(b + 1) * c_out * hw];
        for (o, row) in y.chunks_exact_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        for (i0, i1) in row_chunks(h, w) {
            let nc = (i1 - i0) * w;
            im2col(xb, c_in, (h, w), (i0, i1), &mut cols);
            gemm_strided(
                c_out,
                k,
                nc,
                1.0,
                Strided::rows(kernel.data(), k),
                Strided::rows(&cols, nc),
                1.0,
                &mut y[i0 * w..],
                hw,
            );
        }
    }
    Tensor::new(vec![batch, c_out, h, w], out)
}

pub(crate) fn conv3x3_backward_into(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor> {
    let (batch, c_in, h, w, c_out) = check(x, kernel)?;
    if grad_out.shape() != [batch, c_out, h, w] {
        return Err(shape_err!(
            "grad {:?} does not match output [{batch}, {c_out}, {h}, {w}]",
            grad_out.shape()
        ));
    }
    let (hw, k) = (h * w, c_in * 9);
    let mut cols = vec![0.0; k * CHUNK_COLS.max(w)];
    let mut gcols = vec![0.0; k * CHUNK_COLS.max(w)];
    let mut gx = vec![0.0; batch * c_in * hw];
    for b in 0..batch {
        let g = &grad_out.data()[b * c_out * hw..(b + 1) * c_out * hw];
        let xb = &x.data()[b * c_in * hw..(b + 1) * c_in * hw];
        let gxb = &mut gx[b * c_in * hw..(b + 1) * c_in * hw];
        for (o, row) in g.chunks_exact(hw).enumerate() {
            grad_bias[o] += row.iter().sum::<f64>();
        }
        for (i0, i1) in row_chunks(h, w) {
            let nc = (i1 - i0) * w;
            let gc = Strided::rows(&g[i0 * w..], hw);
            im2col(xb, c_in, (h, w), (i0, i1), &mut cols);
            gemm_strided(
                c_out,
                nc,
                k,
                1.0,
                gc,
                Strided::cols(&cols, nc),
                1.0,
                grad_kernel,
                k,
            );
            gemm_strided(
                k,
                c_out,
                nc,
                1.0,
                Strided::cols(kernel.data(), k),
                gc,
                0.0,
                &mut gcols,
                nc,
            );
            col2im(&gcols, c_in, (h, w), (i0, i1), gxb);
        }
    }
    Tensor::new(x.shape().to_vec(), gx)
}

/// Returns `(grad_x, grad_kernel, grad_bias)`.
pub fn conv3x3_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut gk = Tensor::zeros(kernel.shape());
    let mut gb = Tensor::zeros(&[kernel.shape()[0]]);
    let gx = conv3x3_backward_into(x, kernel, grad_out, gk.data_mut(), gb.data_mut())?;
    Ok((gx, gk, gb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub kernel: ParamTensor<Tensor>,
    pub bias: ParamTensor<Tensor>,
}

impl Conv3x3 {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let k = uniform_fan_in(rng, c_out * c_in * 9, c_in * 9);
        Self {
            kernel: ParamTensor::new(
                format!("{name}.kernel"),
                Tensor::new(vec![c_out, c_in, 3, 3], k).expect("positive extents"),
            ),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv3x3(x, &self.kernel.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        conv3x3_backward_into(
            x,
            &self.kernel.value,
            grad_out,
            self.kernel.grad.data_mut(),
            self.bias.grad.data_mut(),
        )
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a dyn ParamSlot>) {
        out.push(&self.kernel);
        out.push(&self.bias);
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut dyn ParamSlot>) {
        out.push(&mut self.kernel);
        out.push(&mut self.bias);
    }
}
