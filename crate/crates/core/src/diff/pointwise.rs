use rand::Rng;

use super::linalg::gemm;
use super::param::{ParamSlot, ParamTensor};
use super::uniform_fan_in;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn check(x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (b, c_in, h, w) = x.dims4()?;
    match weight.shape()[..] {
        [_, wi] if wi == c_in => Ok((b, c_in, h * w, weight.shape()[0])),
        _ => Err(shape_err!(
            "pointwise weight {:?} does not accept {c_in} input channels",
            weight.shape()
        )),
    }
}

/// Per-pixel affine channel mix `y[b,o] = sum_i W[o,i] x[b,i] + bias[o]`.
pub fn pointwise_linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, c_in, hw, c_out) = check(x, weight)?;
    if bias.shape() != [c_out] {
        return Err(shape_err!("bias {:?} for {c_out} outputs", bias.shape()));
    }
    let (_, _, h, w) = x.dims4()?;
    let mut out = vec![0.0; batch * c_out * hw];
    for b in 0..batch {
        let y = &mut out[b * c_out * hw..(b + 1) * c_out * hw];
        for (o, row) in y.chunks_exact_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        let xb = &x.data()[b * c_in * hw..(b + 1) * c_in * hw];
        gemm(
            c_out,
            c_in,
            hw,
            1.0,
            weight.data(),
            false,
            xb,
            false,
            1.0,
            y,
        );
    }
    Tensor::new(vec![batch, c_out, h, w], out)
}

pub(crate) fn pointwise_backward_into(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor> {
    let (batch, c_in, hw, c_out) = check(x, weight)?;
    let (gb_, go, gh, gw_) = grad_out.dims4()?;
    let (_, _, h, w) = x.dims4()?;
    if (gb_, go, gh, gw_) != (batch, c_out, h, w) {
        return Err(shape_err!(
            "grad {:?} does not match output [{batch}, {c_out}, {h}, {w}]",
            grad_out.shape()
        ));
    }
    let mut gx = vec![0.0; batch * c_in * hw];
    for b in 0..batch {
        let g = &grad_out.data()[b * c_out * hw..(b + 1) * c_out * hw];
        let xb = &x.data()[b * c_in * hw..(b + 1) * c_in * hw];
        gemm(c_out, hw, c_in, 1.0, g, false, xb, true, 1.0, grad_weight);
        for (o, row) in g.chunks_exact(hw).enumerate() {
            grad_bias[o] += row.iter().sum::<f64>();
        }
        gemm(
            c_in,
            c_out,
            hw,
            1.0,
            weight.data(),
            true,
            g,
            false,
            0.0,
            &mut gx[b * c_in * hw..(b + 1) * c_in * hw],
        );
    }
    Tensor::new(x.shape().to_vec(), gx)
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub fn pointwise_linear_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[weight.shape()[0]]);
    let gx = pointwise_backward_into(x, weight, grad_out, gw.data_mut(), gb.data_mut())?;
    Ok((gx, gw, gb))
}

/// Pointwise linear layer (a 1x1 convolution).
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseLinear {
    pub weight: ParamTensor<Tensor>,
    pub bias: ParamTensor<Tensor>,
}

impl PointwiseLinear {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let w = uniform_fan_in(rng, c_out * c_in, c_in);
        Self {
            weight: ParamTensor::new(
                format!("{name}.weight"),
                Tensor::new(vec![c_out, c_in], w).expect("positive extents"),
            ),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
        }
    }

    pub fn identity(name: &str, c: usize) -> Self {
        let mut w = Tensor::zeros(&[c, c]);
        for i in 0..c {
            w.set(&[i, i], 1.0);
        }
        Self {
            weight: ParamTensor::new(format!("{name}.weight"), w),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[c])),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        pointwise_linear(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        pointwise_backward_into(
            x,
            &self.weight.value,
            grad_out,
            self.weight.grad.data_mut(),
            self.bias.grad.data_mut(),
        )
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a dyn ParamSlot>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut dyn ParamSlot>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{projection, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(
            vec![2, 3, 4, 4],
            (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let id = PointwiseLinear::identity("id", 3);
        assert_eq!(id.forward(&x).unwrap(), x);
    }

    #[test]
    fn scalar_affine() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(vec![1], vec![3.0]).unwrap();
        let y = pointwise_linear(&x, &w, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 4]);
        assert!(pointwise_linear(&x, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn weight_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = PointwiseLinear::new("p", 3, 2, &mut rng);
        let x = Tensor::new(
            vec![2, 3, 4, 5],
            (0..120).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let r = projection(2 * 2 * 20, 4);
        let (_, gw, _) = pointwise_linear_backward(
            &x,
            &layer.weight.value,
            &Tensor::new(vec![2, 2, 4, 5], r.clone()).unwrap(),
        )
        .unwrap();
        let err = GradCheck::default().max_rel_error(
            |w| {
                let wt = Tensor::new(vec![2, 3], w.to_vec()).unwrap();
                let y = pointwise_linear(&x, &wt, &layer.bias.value).unwrap();
                y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            layer.weight.value.data(),
            gw.data(),
        );
        assert!(err < 1e-6, "rel err {err}");
    }
}
