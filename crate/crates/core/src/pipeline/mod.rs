//! Configuration, datasets, training, conversion, benchmarking and export.

pub mod benchmark;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod embeddings;
pub mod toy;
pub mod train;

pub use benchmark::{benchmark_rtf, DecoderChoice, RtfReport};
pub use config::PipelineConfig;
pub use convert::{convert, convert_audio, load_model};
pub use dataset::{extract_features, ExtractReport, UtteranceRecord};
pub use embeddings::export_embeddings;
pub use train::{train, train_records, StepMetrics, TrainOptions, TrainSummary};
