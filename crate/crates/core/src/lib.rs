//! Deep parallel spectral neural operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense real/complex arrays, 2-D real FFTs and the `NOPT` binary container,
//! * [`diff`] layer primitives with hand-derived adjoints, losses, Adam and a gradient checker,
//! * [`model`] the multi-scale operator with parallel (or serial) spectral blocks,
//! * [`pde`] synthetic Darcy / Navier-Stokes data with their numerical oracles,
//! * [`harness`] training, checkpoints and the evaluation protocols.

pub mod diff;
pub mod error;
pub mod harness;
pub mod model;
pub mod pde;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, GridMeta, Tensor};
