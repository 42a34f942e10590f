//! Multimodal bag-of-patches modelling: spatial patch graphs, clinical
//! embeddings, squeeze-and-excitation fusion, a selective state-space MIL
//! encoder, Cox and BCE objectives, and survival metrics.

pub mod clinical;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod mil;
pub mod model;
pub mod numkit;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
