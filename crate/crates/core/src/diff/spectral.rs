use num_complex::Complex64;
use rand::Rng;

use super::param::{ParamSlot, ParamTensor};
use super::simd::dispatch;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{fft2_forward, fft2_inverse, half_width, ComplexTensor, Tensor};

/// Fourier-space convolution with weights on a truncated mode rectangle.
///
/// Retained modes are rows `0..m1` (low positive frequencies) and
/// `H-m1..H` (low negative frequencies) of the half-spectrum, columns `0..m2`.
/// Each row band owns its own `[C_in, C_out, m1, m2]` complex weight block.
/// Because the weights index frequencies rather than grid points, the same
/// layer applies to every grid with `H >= 2*m1` and `W >= 2*m2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralConvLayer {
    pub weights_pos: ParamTensor<ComplexTensor>,
    pub weights_neg: ParamTensor<ComplexTensor>,
    modes: (usize, usize),
}

impl SpectralConvLayer {
    /// Weights with each component drawn from `U[0, 1) / (c_in * c_out)`.
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        modes: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layer = Self::zeros(name, c_in, c_out, modes)?;
        let scale = 1.0 / (c_in * c_out) as f64;
        for block in [&mut layer.weights_pos, &mut layer.weights_neg] {
            for v in block.value.as_f64_mut() {
                *v = scale * rng.random::<f64>();
            }
        }
        Ok(layer)
    }

    pub fn zeros(name: &str, c_in: usize, c_out: usize, modes: (usize, usize)) -> Result<Self> {
        let (m1, m2) = modes;
        if m1 == 0 || m2 == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::Config(format!(
                "spectral layer `{name}` needs positive modes and channels, got modes {modes:?}"
            )));
        }
        let shape = [c_in, c_out, m1, m2];
        Ok(Self {
            weights_pos: ParamTensor::new(format!("{name}.pos"), ComplexTensor::zeros(&shape)),
            weights_neg: ParamTensor::new(format!("{name}.neg"), ComplexTensor::zeros(&shape)),
            modes,
        })
    }

    pub fn modes(&self) -> (usize, usize) {
        self.modes
    }

    pub fn in_channels(&self) -> usize {
        self.weights_pos.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weights_pos.value.shape()[1]
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let (m1, m2) = self.modes;
        if h < 2 * m1 || w < 2 * m2 {
            return Err(shape_err!(
                "grid {h}x{w} cannot hold {m1}x{m2} retained modes (needs at least {}x{})",
                2 * m1,
                2 * m2
            ));
        }
        Ok(())
    }

    /// Half-spectrum `[H, W/2+1]` indicator of the retained modes.
    pub fn retained_mask(&self, h: usize, w: usize) -> Result<Tensor> {
        self.check_grid(h, w)?;
        let (m1, m2) = self.modes;
        let w2 = half_width(w);
        let mut mask = Tensor::zeros(&[h, w2]);
        for r in 0..m1 {
            for row in [r, h - m1 + r] {
                for c in 0..m2 {
                    mask.data_mut()[row * w2 + c] = 1.0;
                }
            }
        }
        Ok(mask)
    }

    fn spec_dims(&self, spec: &ComplexTensor, channels: usize) -> Result<(usize, usize, usize)> {
        match spec.shape()[..] {
            [b, c, h, w2] if c == channels => Ok((b, h, w2)),
            _ => Err(shape_err!(
                "spectrum {:?} does not carry {channels} channels",
                spec.shape()
            )),
        }
    }

    // Spectrum offsets of the retained modes, in weight order (band, r, c).
    fn mode_offsets(&self, h: usize, w2: usize) -> Vec<usize> {
        let (m1, m2) = self.modes;
        let mut out = Vec::with_capacity(2 * m1 * m2);
        for row0 in [0, h - m1] {
            for r in 0..m1 {
                for c in 0..m2 {
                    out.push((row0 + r) * w2 + c);
                }
            }
        }
        out
    }

    // Weights as planar `[c_in * c_out][modes]` real and imaginary parts.
    fn planar_weights(&self) -> Planar {
        let (m1, m2) = self.modes;
        let per = m1 * m2;
        let pairs = self.in_channels() * self.out_channels();
        let mut p = Planar::zeros(pairs, 2 * per);
        for (band, weights) in [&self.weights_pos, &self.weights_neg]
            .into_iter()
            .enumerate()
        {
            let wd = weights.value.data();
            for pair in 0..pairs {
                let (re, im) = p.row_mut(pair);
                for k in 0..per {
                    let v = wd[pair * per + k];
                    re[band * per + k] = v.re;
                    im[band * per + k] = v.im;
                }
            }
        }
        p
    }

    /// `ys[b, o, k] += sum_i R[i, o, k] * xs[b, i, k]` over retained modes.
    pub fn accumulate_modes(&self, xs: &ComplexTensor, ys: &mut ComplexTensor) -> Result<()> {
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let (batch, h, w2) = self.spec_dims(xs, c_in)?;
        if ys.shape() != [batch, c_out, h, w2] {
            return Err(shape_err!("output spectrum {:?} mismatched", ys.shape()));
        }
        let (m1, m2) = self.modes;
        if h < 2 * m1 || w2 < m2 {
            return Err(shape_err!(
                "spectrum {h}x{w2} too small for modes {m1}x{m2}"
            ));
        }
        let offsets = self.mode_offsets(h, w2);
        let n = offsets.len();
        let x = Planar::gather(xs.data(), batch * c_in, h * w2, &offsets);
        let wt = self.planar_weights();
        let mut y = Planar::zeros(batch * c_out, n);
        mix_forward(
            &x.re,
            &x.im,
            &wt.re,
            &wt.im,
            &mut y.re,
            &mut y.im,
            [batch, c_in, c_out, x.ld],
        );
        y.scatter_add(ys.data_mut(), h * w2, &offsets);
        Ok(())
    }

    /// Adjoint of [`Self::accumulate_modes`] followed by the inverse transform.
    ///
    /// `grad_spec` is the unnormalised forward transform of the output gradient.
    /// Weight gradients accumulate `conj(X) * G * w/(H*W)` (w = 1 on the DC
    /// column, 2 elsewhere, the column multiplicity of the real inverse);
    /// `grad_xs` accumulates `conj(R) * G`, whose inverse transform is the
    /// input gradient.
    pub fn backward_modes(
        &mut self,
        xs: &ComplexTensor,
        grad_spec: &ComplexTensor,
        grad_xs: &mut ComplexTensor,
        width: usize,
    ) -> Result<()> {
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let (batch, h, w2) = self.spec_dims(xs, c_in)?;
        if grad_spec.shape() != [batch, c_out, h, w2] || grad_xs.shape() != xs.shape() {
            return Err(shape_err!(
                "gradient spectra {:?} / {:?} mismatched",
                grad_spec.shape(),
                grad_xs.shape()
            ));
        }
        let (m1, m2) = self.modes;
        let inv_hw = 1.0 / (h * width) as f64;
        let offsets = self.mode_offsets(h, w2);
        let n = offsets.len();
        let mut scale: Vec<f64> = offsets
            .iter()
            .map(|&k| {
                let c = k % w2;
                let nyquist = width % 2 == 0 && c == width / 2;
                if c == 0 || nyquist {
                    inv_hw
                } else {
                    2.0 * inv_hw
                }
            })
            .collect();
        scale.resize(n + ROW_PAD, 0.0);
        let plane = h * w2;
        let x = Planar::gather(xs.data(), batch * c_in, plane, &offsets);
        let g = Planar::gather(grad_spec.data(), batch * c_out, plane, &offsets);
        let wt = self.planar_weights();
        let mut gw = Planar::zeros(c_in * c_out, n);
        let mut gx = Planar::zeros(batch * c_in, n);
        mix_backward(
            [&x.re, &x.im, &g.re, &g.im, &wt.re, &wt.im, &scale],
            [&mut gw.re, &mut gw.im, &mut gx.re, &mut gx.im],
            [batch, c_in, c_out, x.ld],
        );
        gx.scatter_add(grad_xs.data_mut(), plane, &offsets);
        let per = m1 * m2;
        for (band, param) in [&mut self.weights_pos, &mut self.weights_neg]
            .into_iter()
            .enumerate()
        {
            let gd = param.grad.data_mut();
            for pair in 0..c_in * c_out {
                let (gwr, gwi) = gw.row(pair);
                for k in 0..per {
                    gd[pair * per + k] += Complex64::new(gwr[band * per + k], gwi[band * per + k]);
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        spectral_conv(x, self)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        spectral_conv_backward(x, self, grad_out)
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a dyn ParamSlot>) {
        out.push(&self.weights_pos);
        out.push(&self.weights_neg);
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut dyn ParamSlot>) {
        out.push(&mut self.weights_pos);
        out.push(&mut self.weights_neg);
    }
}

// Modes per cache tile of the channel-mixing loops.
const MODE_TILE: usize = 32;
// Row padding of planar buffers; keeps rows off 4 KiB-aliased addresses.
const ROW_PAD: usize = 8;

dispatch! {
    // y[b, o] += x[b, i] * w[i, o], per mode, planar complex.
    fn mix_forward(
        xr: &[f64],
        xi: &[f64],
        wr: &[f64],
        wi: &[f64],
        yr: &mut [f64],
        yi: &mut [f64],
        dims: [usize; 4],
    ) {
        let [batch, c_in, c_out, n] = dims;
        for q0 in (0..n).step_by(MODE_TILE) {
            let t = MODE_TILE.min(n - q0);
            for b in 0..batch {
                for i in 0..c_in {
                    let xo = (b * c_in + i) * n + q0;
                    let (xr, xi) = (&xr[xo..xo + t], &xi[xo..xo + t]);
                    for o in 0..c_out {
                        let wo = (i * c_out + o) * n + q0;
                        let yo = (b * c_out + o) * n + q0;
                        let (wr, wi) = (&wr[wo..wo + t], &wi[wo..wo + t]);
                        let (yr, yi) = (&mut yr[yo..yo + t], &mut yi[yo..yo + t]);
                        for q in 0..t {
                            yr[q] += xr[q] * wr[q] - xi[q] * wi[q];
                            yi[q] += xr[q] * wi[q] + xi[q] * wr[q];
                        }
                    }
                }
            }
        }
    }
}

dispatch! {
    // gw[i, o] += conj(x[b, i]) * g[b, o] * scale and gx[b, i] += conj(w[i, o]) * g[b, o].
    fn mix_backward(inputs: [&[f64]; 7], outputs: [&mut [f64]; 4], dims: [usize; 4]) {
        let [xr, xi, gr, gi, wr, wi, sc] = inputs;
        let [gwr, gwi, gxr, gxi] = outputs;
        let [batch, c_in, c_out, n] = dims;
        for q0 in (0..n).step_by(MODE_TILE) {
            let t = MODE_TILE.min(n - q0);
            let sc = &sc[q0..q0 + t];
            for b in 0..batch {
                for i in 0..c_in {
                    let xo = (b * c_in + i) * n + q0;
                    let (xr, xi) = (&xr[xo..xo + t], &xi[xo..xo + t]);
                    let (gxr, gxi) = (&mut gxr[xo..xo + t], &mut gxi[xo..xo + t]);
                    for o in 0..c_out {
                        let go = (b * c_out + o) * n + q0;
                        let wo = (i * c_out + o) * n + q0;
                        let (gr, gi) = (&gr[go..go + t], &gi[go..go + t]);
                        let (wr, wi) = (&wr[wo..wo + t], &wi[wo..wo + t]);
                        let (gwr, gwi) = (&mut gwr[wo..wo + t], &mut gwi[wo..wo + t]);
                        for q in 0..t {
                            gwr[q] += (xr[q] * gr[q] + xi[q] * gi[q]) * sc[q];
                            gwi[q] += (xr[q] * gi[q] - xi[q] * gr[q]) * sc[q];
                            gxr[q] += wr[q] * gr[q] + wi[q] * gi[q];
                            gxi[q] += wr[q] * gi[q] - wi[q] * gr[q];
                        }
                    }
                }
            }
        }
    }
}

/// Split real/imaginary storage of `rows` vectors of length `n`.
///
/// Rows are `ld = n + ROW_PAD` apart; the padding lanes stay zero.
struct Planar {
    re: Vec<f64>,
    im: Vec<f64>,
    n: usize,
    ld: usize,
}

impl Planar {
    fn zeros(rows: usize, n: usize) -> Self {
        let ld = n + ROW_PAD;
        Self {
            re: vec![0.0; rows * ld],
            im: vec![0.0; rows * ld],
            n,
            ld,
        }
    }

    fn gather(data: &[Complex64], rows: usize, plane: usize, offsets: &[usize]) -> Self {
        let mut p = Self::zeros(rows, offsets.len());
        for r in 0..rows {
            let src = &data[r * plane..(r + 1) * plane];
            let (re, im) = p.row_mut(r);
            for ((dr, di), &k) in re.iter_mut().zip(im.iter_mut()).zip(offsets) {
                *dr = src[k].re;
                *di = src[k].im;
            }
        }
        p
    }

    fn scatter_add(&self, data: &mut [Complex64], plane: usize, offsets: &[usize]) {
        for r in 0..self.re.len() / self.ld {
            let dst = &mut data[r * plane..(r + 1) * plane];
            let (re, im) = self.row(r);
            for ((&vr, &vi), &k) in re.iter().zip(im).zip(offsets) {
                dst[k] += Complex64::new(vr, vi);
            }
        }
    }

    #[inline]
    fn row(&self, r: usize) -> (&[f64], &[f64]) {
        let s = r * self.ld..r * self.ld + self.n;
        (&self.re[s.clone()], &self.im[s])
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> (&mut [f64], &mut [f64]) {
        let s = r * self.ld..r * self.ld + self.n;
        (&mut self.re[s.clone()], &mut self.im[s])
    }
}

fn zero_spec(batch: usize, channels: usize, h: usize, w: usize) -> ComplexTensor {
    ComplexTensor::zeros(&[batch, channels, h, half_width(w)])
}

/// `F^-1(R . F x)` on `[B, C_in, H, W]`, all non-retained modes zeroed.
pub fn spectral_conv(x: &Tensor, layer: &SpectralConvLayer) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    layer.check_grid(h, w)?;
    let xs = fft2_forward(x)?;
    let mut ys = zero_spec(b, layer.out_channels(), h, w);
    layer.accumulate_modes(&xs, &mut ys)?;
    fft2_inverse(&ys, w)
}

/// Accumulates weight gradients into `layer` and returns the input gradient.
pub fn spectral_conv_backward(
    x: &Tensor,
    layer: &mut SpectralConvLayer,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (b, c_in, h, w) = x.dims4()?;
    layer.check_grid(h, w)?;
    let xs = fft2_forward(x)?;
    let gs = fft2_forward(grad_out)?;
    let mut gxs = zero_spec(b, c_in, h, w);
    layer.backward_modes(&xs, &gs, &mut gxs, w)?;
    fft2_inverse(&gxs, w)
}
