//! Layer primitives with hand-derived adjoints.
//!
//! Every layer exposes a `forward` and a `backward`; backward receives the
//! forward input (the caller keeps it) and the gradient of the output,
//! accumulates parameter gradients in place and returns the input gradient.

mod activation;
mod adam;
mod conv;
mod gradcheck;
mod linalg;
mod loss;
mod param;
mod pointwise;
mod pool;
mod simd;
mod spectral;

pub use activation::{gelu, gelu_backward, gelu_scalar};
pub use adam::{AdamConfig, AdamState};
pub use conv::{conv3x3, conv3x3_backward, Conv3x3};
pub use gradcheck::{projection, GradCheck};
pub use loss::{mse_loss, relative_l2, relative_l2_loss};
pub use param::{ParamData, ParamSlot, ParamTensor};
pub use pointwise::{pointwise_linear, pointwise_linear_backward, PointwiseLinear};
pub use pool::{avgpool2, avgpool2_backward, upsample_nearest2, upsample_nearest2_backward};
pub use spectral::{spectral_conv, spectral_conv_backward, SpectralConvLayer};

use rand::Rng;

/// `Uniform(-sqrt(1/fan_in), sqrt(1/fan_in))` draws.
pub(crate) fn uniform_fan_in(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}
