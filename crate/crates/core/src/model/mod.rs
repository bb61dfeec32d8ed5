//! Dual-path neural operator: configuration, operator blocks and the
//! multi-scale network.

mod block;
mod config;
mod network;

pub use block::{
    conjugate_closure, parallel_block_forward, serial_block_forward, BlockCache, Branch,
    OperatorBlock,
};
pub use config::{DpnoConfig, Variant};
pub use network::{apply_at_resolution, dpno_forward, model_init, DpnoModel, ModelCache};
