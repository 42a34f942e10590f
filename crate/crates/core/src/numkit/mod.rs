//! Dense kernels, the differentiation tape, and the parameter registry.

pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod ops;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_store, GradCheckReport};
pub use layers::{linear, Ctx};
pub use matrix::{Matrix, Real};
pub use ops::{bce_with_logits, cosine_similarity, layer_norm, log_sum_exp, sigmoid, softmax, softplus};
pub use params::{Bound, ParamEntry, ParameterStore};
pub use tape::{CustomOp, Gradients, Tape, Unary, Var};
