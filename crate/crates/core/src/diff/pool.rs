use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Non-overlapping 2x2 mean over the spatial axes of `[B, C, H, W]`.
pub fn avgpool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("avgpool2 needs even extents, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; b * c * ho * wo];
    for (plane, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(ho * wo))
    {
        for i in 0..ho {
            let r0 = &plane[2 * i * w..(2 * i + 1) * w];
            let r1 = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..wo {
                dst[i * wo + j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out)
}

/// Adjoint of [`avgpool2`]: each output gradient is spread as `g/4` over its block.
pub fn avgpool2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (b, c, ho, wo) = grad_out.dims4()?;
    let up = upsample_nearest2(grad_out)?;
    debug_assert_eq!(up.shape(), [b, c, 2 * ho, 2 * wo]);
    Ok(up.scale(0.25))
}

/// Replicates every pixel into a 2x2 block.
pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * c * ho * wo];
    for (plane, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(ho * wo))
    {
        for i in 0..h {
            let row = &mut dst[2 * i * wo..(2 * i + 1) * wo];
            for j in 0..w {
                let v = plane[i * w + j];
                row[2 * j] = v;
                row[2 * j + 1] = v;
            }
            dst.copy_within(2 * i * wo..(2 * i + 1) * wo, (2 * i + 1) * wo);
        }
    }
    Tensor::new(vec![b, c, ho, wo], out)
}

/// Adjoint of [`upsample_nearest2`]: sums each 2x2 block.
pub fn upsample_nearest2_backward(grad_out: &Tensor) -> Result<Tensor> {
    Ok(avgpool2(grad_out)?.scale(4.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{projection, GradCheck};

    #[test]
    fn pooling_examples() {
        let c = avgpool2(&Tensor::full(&[1, 2, 4, 6], 1.5)).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 3]);
        assert!(c.data().iter().all(|&v| v == 1.5));
        let block = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2(&block).unwrap().data(), &[2.5]);
        assert!(avgpool2(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn upsample_examples() {
        let one = Tensor::full(&[1, 1, 1, 1], 7.0);
        assert_eq!(
            upsample_nearest2(&one).unwrap(),
            Tensor::full(&[1, 1, 2, 2], 7.0)
        );
        let x = Tensor::new(vec![1, 2, 2, 3], projection(12, 1)).unwrap();
        assert_eq!(avgpool2(&upsample_nearest2(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn adjoints_match_central_differences() {
        let x = Tensor::new(vec![2, 2, 4, 4], projection(64, 2)).unwrap();
        let r = projection(16, 3);
        let g = avgpool2_backward(&Tensor::new(vec![2, 2, 2, 2], r.clone()).unwrap()).unwrap();
        let err = GradCheck::default().max_rel_error(
            |p| {
                let t = Tensor::new(vec![2, 2, 4, 4], p.to_vec()).unwrap();
                avgpool2(&t)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            x.data(),
            g.data(),
        );
        assert!(err < 1e-8, "{err}");

        let r = projection(256, 4);
        let g =
            upsample_nearest2_backward(&Tensor::new(vec![2, 2, 8, 8], r.clone()).unwrap()).unwrap();
        let err = GradCheck::default().max_rel_error(
            |p| {
                let t = Tensor::new(vec![2, 2, 4, 4], p.to_vec()).unwrap();
                upsample_nearest2(&t)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            x.data(),
            g.data(),
        );
        assert!(err < 1e-8, "{err}");
    }
}
