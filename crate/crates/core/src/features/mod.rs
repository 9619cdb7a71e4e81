//! The four conditioning streams: content, speaker, emotion and F0.

pub mod conditions;
pub mod content;
pub mod emotion;
pub mod f0;
pub mod projection;
pub mod rafe;
pub mod speaker;

pub use conditions::{assemble_conditions, ConditionBlock, ConditionSet, CONDITION_DIM};
pub use content::{ContentFrames, ContentProvider};
pub use emotion::EmotionEmbedding;
pub use f0::{f0_bin, f0_indices, shift_f0, track_f0, F0Contour};
pub use rafe::FeatureFile;
pub use speaker::{embed_speaker, SpeakerEmbedding};
