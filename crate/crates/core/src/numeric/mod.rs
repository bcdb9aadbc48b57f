//! Dense arrays, reverse-mode differentiation and gradient checking.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::{
    causal_mask, dot, masked_softmax_rows, matmul, matmul_nt, matmul_tn, scaled_softplus,
    scaled_softplus_scalar, sigmoid, NumArray, SOFTPLUS_GUARD,
};
pub use gradcheck::{grad_check, rel_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
