//! The full encoder-decoder and its checkpoint format.
//!
//! Encoder: 7x7/2 stem, patch embedding, then three patch-merging stages;
//! stages 2-5 hold SCVSS blocks and any stage may end in a wavelet Mamba
//! block. Decoder: four up-stages mirroring the encoder widths with skip
//! fusion and optional 1x1 auxiliary heads, then a full-resolution head.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC,
    VERSION,
};
pub use config::ModelConfig;
pub use model::{argmax_classes, Architecture, Model, SegOutput, SegVars};
