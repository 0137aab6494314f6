//! Sequence-to-sequence LSTM model: parameters, forward passes, loss and
//! gradients, plus a finite-difference gradient checker.

pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod seq2seq;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use lstm::{lstm_cell_step, HiddenState, LstmLayer, LstmLayerParams};
pub use model::{init_params, Architecture, ModelParams};
pub use seq2seq::{
    accumulate_gradient, decode_target, encode, skipgram_gradient, skipgram_loss, DecodedSequence, ExampleRef,
    Gradient, LossBreakdown, LossNormalization, ObjectiveConfig, SegmentEmbedding,
};
