//! Embeddings, encoder and read-out heads of the field-token model.

mod checkpoint;
mod encoder;
mod heads;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use encoder::{
    build_cache, embed_backward, embed_inputs, encode, encode_cached, encode_with_tape, encoder_backward, EncodeOutput, EncoderTape,
    KvCache, Slot,
};
pub use heads::{
    cosine, cosine_with_grad, generate_vector, generate_vector_full, generate_vector_backward, score_label,
    GeneratedVector,
};
pub use params::{Block, ModelConfig, ModelParams, Tensor};
