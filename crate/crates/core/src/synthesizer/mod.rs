//! The three attention-free decoders mapping content features (and
//! optionally a speaker embedding) to mel-spectrograms.

mod checkpoint;
mod decoder;
mod params;
pub mod tape;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use decoder::{
    condition_speaker, forward_free_running, forward_teacher, loss_and_gradients, teacher_forced_loss, TrainingBatch,
};
pub use params::{build_decoder, DecoderConfig, FeatureStats, ModelParameters};
