//! Bidirectional stacked-GRU generative model over Pauli-4 outcome strings.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod network;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, read_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use gru::gru_cell_forward;
pub use network::{
    batch_log_probs, batch_loss, direction_conditionals, loss_and_gradients, sample_batch, sample_sequence,
    sequence_log_prob, SequenceLogProb, StepDistribution,
};
pub use params::{init_model, Direction, DirectionParams, GruLayer, ModelConfig, ModelParams};
