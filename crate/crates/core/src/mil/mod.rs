//! Patch selection and the selective state-space MIL encoder.

pub mod aps;
pub mod block;
pub mod conv;
pub mod probe;
pub mod scan;

pub use aps::{raster_order, select_top, write_patch_scores, ApsOutput, PatchScorer};
pub use block::{init_block, mamba_block, mil_encode, BlockDims, MilConfig, MilEncoder, MilOutput};
pub use conv::{causal_conv, causal_conv_value};
pub use probe::{complexity_probe, ProbeReport};
pub use scan::{selective_scan, ssm_scan, Discretization, Explicit, ScanOutput, Selective};
