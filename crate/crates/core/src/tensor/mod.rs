//! Dense kernels, parameter storage and reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod params;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use ops::{
    dense, layer_norm, linear, lstm_encode, lstm_run, lstm_state, masked_softmax, register_layer_norm, register_linear,
    LstmLayer, LstmRun, LstmState,
};
pub use params::{reduce_gradients, Gradients, Init, ParamStore};
pub use tape::{Tape, Var};
