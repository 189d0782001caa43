//! State-space kernels and the basic Mamba block shared by both branches.

mod block;
pub mod kernel;
mod ops;

pub(crate) use block::uniform as block_uniform;
pub use block::{
    init_mamba_block, mamba_block_forward, selective_params, BlockConfig, MambaBlockParams,
    SsmParams,
};
pub use kernel::{
    conv_apply, discretize_zoh, recurrent_scan, selective_scan_forward, ssm_conv_kernel,
    zoh_coeffs, ScanDims,
};
pub use ops::{causal_conv1d, rms_norm, selective_scan};
