//! Synthetic PDE data: Gaussian random fields, a finite-volume Darcy solver,
//! a pseudospectral Navier-Stokes stepper and dataset assembly.

mod darcy;
mod dataset;
mod grf;
mod ns;

pub use darcy::{
    darcy_coefficient, darcy_solve_fd, DarcySample, DarcySolve, Forcing, Threshold, CG_TOLERANCE,
};
pub use dataset::{
    darcy_sample, dataset_build, sample_seeds, DarcyParams, DatasetSpec, FieldDataset, NormStats,
    NsMode, NsParams, OracleReport, Task,
};
pub use grf::{grf_sample, GrfSpec};
pub use ns::{ns_forcing, ns_rollout, NsConfig, NsTrajectory};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn strided(x: &Tensor, factor: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = x.spatial()?;
    let planes = x.len() / (h * w);
    let mut data = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..out_h {
            for j in 0..out_w {
                data.push(plane[i * factor * w + j * factor]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    Tensor::new(shape, data)
}

/// Keeps every `factor`-th entry of the last two axes, starting at index 0.
pub fn downsample_field(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w) = x.spatial()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!(
            "factor {factor} does not divide the {h}x{w} grid"
        ));
    }
    strided(x, factor, h / factor, w / factor)
}

/// Strided subsampling of a node grid that keeps both boundary lines:
/// `(n - 1) / factor + 1` nodes per axis.
pub fn downsample_nodes(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w) = x.spatial()?;
    if factor == 0 || (h - 1) % factor != 0 || (w - 1) % factor != 0 {
        return Err(shape_err!(
            "factor {factor} does not divide the {}x{} node spacings",
            h - 1,
            w - 1
        ));
    }
    strided(x, factor, (h - 1) / factor + 1, (w - 1) / factor + 1)
}
