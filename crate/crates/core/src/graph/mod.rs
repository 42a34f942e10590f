//! Patch-level spatial graphs and graph neural network features.

pub mod bag;
pub mod build;
pub mod encoder;
pub mod gnn;

pub use bag::PatchBag;
pub use build::{build_graph, SpatialGraph};
pub use encoder::{graph_embed, GnnKind, GraphEmbedding, GraphEncoder, GraphEncoderConfig};
pub use gnn::{gat_attention, gat_forward, gcn_forward, GatOptions, GatWeights, GcnWeights};

use serde::{Deserialize, Serialize};

/// Edge thresholds. `tau_spatial` is in pixels; the default spans two tile
/// strides at a 256 px stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphThresholds {
    pub tau_spatial: f64,
    pub tau_tissue: f64,
}

impl Default for GraphThresholds {
    fn default() -> Self {
        Self { tau_spatial: 2.5 * 256.0, tau_tissue: 0.75 }
    }
}
