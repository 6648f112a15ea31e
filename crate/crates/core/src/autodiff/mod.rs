//! Minimal dense reverse-mode automatic differentiation.

mod array;
mod gradcheck;
mod optim;
mod serialize;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use optim::{AdamConfig, AdamState};
pub use serialize::{
    decode_weights, encode_weights, load_weights, save_weights, write_weights, NamedArray, MAGIC,
    VERSION,
};
pub use tape::{avgpool2x2_value, log_sigmoid, sigmoid, CustomOp, Gradients, Tape, Var};
