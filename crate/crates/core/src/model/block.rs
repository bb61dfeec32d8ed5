use num_complex::Complex64;
use rand::Rng;

use super::config::Variant;
use crate::diff::{gelu, gelu_backward, ParamSlot, PointwiseLinear, SpectralConvLayer};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{fft2_forward, fft2_inverse, half_width, ComplexTensor, Tensor};

/// One dual-path operator block on a fixed number of channels.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorBlock {
    pub branch_a: SpectralConvLayer,
    pub branch_b: SpectralConvLayer,
    /// Local path; in the serial wiring, the bypass of the first layer.
    pub w: PointwiseLinear,
    /// Bypass of the second layer, serial wiring only.
    pub w2: Option<PointwiseLinear>,
    pub activate: bool,
    /// Nonlinearity between the two serial layers.
    pub inner_activate: bool,
}

/// Intermediates kept by [`OperatorBlock::forward_cached`].
#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Tensor,
    spec: ComplexTensor,
    pre: Option<Tensor>,
    hidden_pre: Option<Tensor>,
    hidden_spec: Option<ComplexTensor>,
}

impl OperatorBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        channels: usize,
        modes_a: (usize, usize),
        modes_b: (usize, usize),
        variant: Variant,
        activate: bool,
        rng: &mut impl Rng,
        extra_rng: &mut impl Rng,
    ) -> Result<Self> {
        let branch_a =
            SpectralConvLayer::new(&format!("{name}.a"), channels, channels, modes_a, rng)?;
        let branch_b =
            SpectralConvLayer::new(&format!("{name}.b"), channels, channels, modes_b, rng)?;
        let w = PointwiseLinear::new(&format!("{name}.w"), channels, channels, rng);
        let w2 = (variant == Variant::Serial)
            .then(|| PointwiseLinear::new(&format!("{name}.w2"), channels, channels, extra_rng));
        Ok(Self {
            branch_a,
            branch_b,
            w,
            w2,
            activate,
            inner_activate: true,
        })
    }

    /// Block with zero spectral weights, identity local maps and no activation.
    pub fn identity(
        channels: usize,
        modes_a: (usize, usize),
        modes_b: (usize, usize),
        variant: Variant,
    ) -> Result<Self> {
        Ok(Self {
            branch_a: SpectralConvLayer::zeros("a", channels, channels, modes_a)?,
            branch_b: SpectralConvLayer::zeros("b", channels, channels, modes_b)?,
            w: PointwiseLinear::identity("w", channels),
            w2: (variant == Variant::Serial).then(|| PointwiseLinear::identity("w2", channels)),
            activate: false,
            inner_activate: false,
        })
    }

    pub fn variant(&self) -> Variant {
        if self.w2.is_some() {
            Variant::Serial
        } else {
            Variant::Parallel
        }
    }

    pub fn channels(&self) -> usize {
        self.w.in_channels()
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        self.branch_a.check_grid(h, w)?;
        self.branch_b.check_grid(h, w)
    }

    fn check_input(&self, v: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, h, w) = v.dims4()?;
        if c != self.channels() {
            return Err(shape_err!(
                "block expects {} channels, got {c}",
                self.channels()
            ));
        }
        self.check_grid(h, w)?;
        Ok((b, h, w))
    }

    pub fn forward(&self, v: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(v)?.0)
    }

    pub fn forward_cached(&self, v: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (b, h, w) = self.check_input(v)?;
        let c = self.channels();
        let spec_shape = [b, c, h, half_width(w)];
        let spec = fft2_forward(v)?;
        let mut ys = ComplexTensor::zeros(&spec_shape);
        let mut hidden_pre = None;
        let mut hidden_spec = None;
        let mut s = match &self.w2 {
            None => {
                self.branch_a.accumulate_modes(&spec, &mut ys)?;
                self.branch_b.accumulate_modes(&spec, &mut ys)?;
                let mut s = fft2_inverse(&ys, w)?;
                s.axpy(1.0, &self.w.forward(v)?)?;
                s
            }
            Some(w2) => {
                self.branch_a.accumulate_modes(&spec, &mut ys)?;
                let mut hp = fft2_inverse(&ys, w)?;
                hp.axpy(1.0, &self.w.forward(v)?)?;
                let hidden = if self.inner_activate {
                    gelu(&hp)
                } else {
                    hp.clone()
                };
                let hs = fft2_forward(&hidden)?;
                let mut yb = ComplexTensor::zeros(&spec_shape);
                self.branch_b.accumulate_modes(&hs, &mut yb)?;
                let mut s = fft2_inverse(&yb, w)?;
                s.axpy(1.0, &w2.forward(v)?)?;
                if self.inner_activate {
                    hidden_pre = Some(hp);
                }
                hidden_spec = Some(hs);
                s
            }
        };
        let pre = if self.activate {
            let out = gelu(&s);
            Some(std::mem::replace(&mut s, out))
        } else {
            None
        };
        let cache = BlockCache {
            input: v.clone(),
            spec,
            pre,
            hidden_pre,
            hidden_spec,
        };
        Ok((s, cache))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BlockCache, grad_out: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = cache.input.dims4()?;
        if grad_out.shape() != cache.input.shape() {
            return Err(shape_err!(
                "block gradient {:?} does not match input {:?}",
                grad_out.shape(),
                cache.input.shape()
            ));
        }
        let gs = match &cache.pre {
            Some(pre) => gelu_backward(pre, grad_out)?,
            None => grad_out.clone(),
        };
        let mut gxs = ComplexTensor::zeros(cache.spec.shape());
        let gv = match &mut self.w2 {
            None => {
                let mut gv = self.w.backward(&cache.input, &gs)?;
                let gspec = fft2_forward(&gs)?;
                self.branch_a
                    .backward_modes(&cache.spec, &gspec, &mut gxs, w)?;
                self.branch_b
                    .backward_modes(&cache.spec, &gspec, &mut gxs, w)?;
                gv.axpy(1.0, &fft2_inverse(&gxs, w)?)?;
                gv
            }
            Some(w2) => {
                let hs = cache
                    .hidden_spec
                    .as_ref()
                    .ok_or_else(|| Error::Shape("serial block cache lacks hidden state".into()))?;
                let mut gv = w2.backward(&cache.input, &gs)?;
                let gspec = fft2_forward(&gs)?;
                let mut ghs = ComplexTensor::zeros(hs.shape());
                self.branch_b.backward_modes(hs, &gspec, &mut ghs, w)?;
                let ghidden = fft2_inverse(&ghs, w)?;
                let ghp = match &cache.hidden_pre {
                    Some(hp) => gelu_backward(hp, &ghidden)?,
                    None => ghidden,
                };
                gv.axpy(1.0, &self.w.backward(&cache.input, &ghp)?)?;
                let gspec = fft2_forward(&ghp)?;
                self.branch_a
                    .backward_modes(&cache.spec, &gspec, &mut gxs, w)?;
                gv.axpy(1.0, &fft2_inverse(&gxs, w)?)?;
                gv
            }
        };
        debug_assert_eq!(gv.spatial()?, (h, w));
        Ok(gv)
    }

    /// Output of the spectral paths alone (`Both` sums the two branches).
    pub fn branch_response(&self, branch: Branch, v: &Tensor) -> Result<Tensor> {
        self.check_input(v)?;
        match branch {
            Branch::A => self.branch_a.forward(v),
            Branch::B => self.branch_b.forward(v),
            Branch::Both => {
                let mut y = self.branch_a.forward(v)?;
                y.axpy(1.0, &self.branch_b.forward(v)?)?;
                Ok(y)
            }
        }
    }

    /// Half-spectrum indicator `[H, W/2+1]` of the modes a branch responds to.
    ///
    /// Probes each mode with unit real and imaginary impulses placed in every
    /// input channel and flags the mode when the branch output is nonzero
    /// relative to the probe.
    pub fn probe_modes(&self, branch: Branch, h: usize, w: usize) -> Result<Tensor> {
        self.check_grid(h, w)?;
        let c = self.channels();
        let w2 = half_width(w);
        let mut mask = Tensor::zeros(&[h, w2]);
        for k1 in 0..h {
            for k2 in 0..w2 {
                for unit in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                    let mut spec = ComplexTensor::zeros(&[1, c, h, w2]);
                    for ch in 0..c {
                        spec.set(&[0, ch, k1, k2], unit);
                    }
                    let probe = fft2_inverse(&spec, w)?;
                    let scale = probe.max_abs();
                    if scale < 1e-14 {
                        continue;
                    }
                    let out = self.branch_response(branch, &probe)?;
                    if out.max_abs() > 1e-9 * scale {
                        mask.set(&[k1, k2], 1.0);
                    }
                }
            }
        }
        Ok(mask)
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.visit_params(&mut v);
        v.iter().map(|p| p.numel()).sum()
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a dyn ParamSlot>) {
        self.branch_a.visit_params(out);
        self.branch_b.visit_params(out);
        self.w.visit_params(out);
        if let Some(w2) = &self.w2 {
            w2.visit_params(out);
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut dyn ParamSlot>) {
        self.branch_a.visit_params_mut(out);
        self.branch_b.visit_params_mut(out);
        self.w.visit_params_mut(out);
        if let Some(w2) = &mut self.w2 {
            w2.visit_params_mut(out);
        }
    }
}

/// Closes a half-spectrum mask under `(k1, k2) ~ (-k1, k2)` on the
/// self-conjugate columns (DC and, for even `width`, Nyquist), where a real
/// field cannot excite one mode without its mirror.
pub fn conjugate_closure(mask: &Tensor, width: usize) -> Result<Tensor> {
    let (h, w2) = mask.spatial()?;
    if mask.ndim() != 2 || w2 != half_width(width) {
        return Err(shape_err!(
            "mask {:?} is not a half-spectrum of width {width}",
            mask.shape()
        ));
    }
    let mut out = mask.clone();
    let mut cols = vec![0];
    if width % 2 == 0 {
        cols.push(width / 2);
    }
    for c in cols {
        for r in 0..h {
            if mask.get(&[r, c]) != 0.0 {
                out.set(&[(h - r) % h, c], 1.0);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    A,
    B,
    Both,
}

/// Parallel-wired block forward: `sigma(SC_a(v) + SC_b(v) + W v + b)`.
pub fn parallel_block_forward(v: &Tensor, block: &OperatorBlock) -> Result<Tensor> {
    if block.w2.is_some() {
        return Err(Error::Config(
            "parallel forward given a serial block".into(),
        ));
    }
    block.forward(v)
}

/// Serial-wired block forward: `sigma(SC_b(sigma(SC_a(v) + W1 v)) + W2 v)`.
pub fn serial_block_forward(v: &Tensor, block: &OperatorBlock) -> Result<Tensor> {
    if block.w2.is_none() {
        return Err(Error::Config(
            "serial forward given a parallel block".into(),
        ));
    }
    block.forward(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{projection, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), projection(n, seed)).unwrap()
    }

    fn random_block(variant: Variant, activate: bool) -> OperatorBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut extra = ChaCha8Rng::seed_from_u64(4);
        OperatorBlock::new(
            "blk",
            3,
            (3, 3),
            (2, 1),
            variant,
            activate,
            &mut rng,
            &mut extra,
        )
        .unwrap()
    }

    #[test]
    fn identity_blocks_pass_input_through() {
        let v = random_input(&[2, 3, 8, 8], 1);
        let par = OperatorBlock::identity(3, (3, 3), (2, 2), Variant::Parallel).unwrap();
        assert!(parallel_block_forward(&v, &par).unwrap().max_abs_diff(&v) < 1e-14);
        let ser = OperatorBlock::identity(3, (3, 3), (2, 2), Variant::Serial).unwrap();
        let out = serial_block_forward(&v, &ser).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-14);
        assert!(serial_block_forward(&v, &par).is_err());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for variant in [Variant::Parallel, Variant::Serial] {
            for activate in [true, false] {
                let block = random_block(variant, activate);
                let v = random_input(&[2, 3, 8, 6], 7);
                let proj = projection(v.len(), 9);
                let objective = |x: &[f64]| {
                    let t = Tensor::new(v.shape().to_vec(), x.to_vec()).unwrap();
                    let y = block.forward(&t).unwrap();
                    y.data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
                };
                let mut b2 = block.clone();
                let (_, cache) = b2.forward_cached(&v).unwrap();
                let g = Tensor::new(v.shape().to_vec(), proj.clone()).unwrap();
                let gv = b2.backward(&cache, &g).unwrap();
                let err = GradCheck::default().max_rel_error(objective, v.data(), gv.data());
                assert!(
                    err < 1e-5,
                    "{variant} activate={activate}: input grad err {err}"
                );
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for variant in [Variant::Parallel, Variant::Serial] {
            let mut block = random_block(variant, true);
            let v = random_input(&[1, 3, 8, 6], 11);
            let (y, cache) = block.forward_cached(&v).unwrap();
            let proj = projection(y.len(), 12);
            let g = Tensor::new(y.shape().to_vec(), proj.clone()).unwrap();
            block.backward(&cache, &g).unwrap();
            let n_params = {
                let mut p = Vec::new();
                block.visit_params(&mut p);
                p.len()
            };
            for idx in 0..n_params {
                let (point, analytic) = {
                    let mut p = Vec::new();
                    block.visit_params(&mut p);
                    (p[idx].values().to_vec(), p[idx].grads().to_vec())
                };
                let objective = |x: &[f64]| {
                    let mut b = block.clone();
                    let mut p = Vec::new();
                    b.visit_params_mut(&mut p);
                    p[idx].values_mut().copy_from_slice(x);
                    let y = b.forward(&v).unwrap();
                    y.data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
                };
                let err =
                    GradCheck::sampled(24, idx as u64).max_rel_error(objective, &point, &analytic);
                assert!(err < 1e-5, "{variant} param {idx}: err {err}");
            }
        }
    }

    #[test]
    fn probes_recover_mode_rectangles() {
        let block = random_block(Variant::Parallel, false);
        let a = block.probe_modes(Branch::A, 8, 8).unwrap();
        let retained_a = block.branch_a.retained_mask(8, 8).unwrap();
        assert_eq!(retained_a.sum(), 18.0);
        assert_eq!(a, conjugate_closure(&retained_a, 8).unwrap());
        // row 3 of the DC column mirrors the retained row 5
        assert_eq!(a.sum(), 19.0);
        assert_eq!(a.get(&[3, 0]), 1.0);
        let b = block.probe_modes(Branch::B, 8, 8).unwrap();
        let retained_b = block.branch_b.retained_mask(8, 8).unwrap();
        assert_eq!(b, conjugate_closure(&retained_b, 8).unwrap());
    }
}
