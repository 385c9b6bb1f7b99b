//! Command vocabulary, synthetic gesture clips, the `GCLP` clip format and
//! participant-disjoint fold assignment.

mod classes;
mod codec;
mod examples;
mod generate;
mod manifest;
pub mod motion;

pub use classes::{
    class_by_label, class_label, class_table, is_background, ClassKind, GestureClass, DOING_NOTHING,
    DOING_SOMETHING_ELSE, LOW_RECALL_COMMANDS, NUM_CLASSES,
};
pub use codec::{
    decode_clip, decode_frame, encode_clip, encode_frame, Frame, CLIP_MAGIC, CLIP_VERSION, FRAME_HEADER_LEN, HEADER_LEN,
};
pub use examples::{pixels_to_input, Examples};
pub use generate::{
    clip_path, generate, participant_mapping, prototype_assignment, variant_seed, Clip, GenSpec, Jitter, Stage,
};
pub use manifest::{assign_folds, write_dataset, Manifest, ManifestEntry, MANIFEST_FILE, SPEC_FILE};
pub use motion::{primitive_pool, MotionPrototype, POOL_SIZE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("clip format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;
