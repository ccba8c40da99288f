//! Dense 2-D arrays with tape-based reverse-mode differentiation: the
//! numeric substrate for the embedding, attention, policy and value networks.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{read_params, read_params_matching, write_params};
pub use error::AutogradError;
pub use gradcheck::{check_gradients, relative_error};
pub use layers::{dense, gru_step, gru_step_projected, layer_norm, lstm_step, scaled_dot_attention, Attention, GruCell, LstmCell};
pub use params::{ParamGrads, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
