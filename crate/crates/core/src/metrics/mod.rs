//! Evaluation metrics for classification and survival.

pub mod classification;
pub mod export;
pub mod stats;
pub mod survival;

pub use classification::{accuracy, accuracy_from_logits, auc_roc};
pub use export::{km_svg, write_km_csv};
pub use stats::{chi2_sf_1df, erfc};
pub use survival::{c_index, km_estimate, log_rank, median, stratify_by_risk, KmCurve, LogRank, RiskGroup};

use serde::Serialize;

use crate::numkit::{ParameterStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub scalars: usize,
    pub bytes: usize,
}

impl ParamCount {
    pub fn megabytes(&self) -> f64 {
        self.bytes as f64 / (1024.0 * 1024.0)
    }
}

pub fn param_count<T: Real>(store: &ParameterStore<T>) -> ParamCount {
    let scalars = store.scalar_count();
    ParamCount { scalars, bytes: scalars * T::BYTES }
}
