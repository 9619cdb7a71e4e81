//! Shared fixtures: a reduced model and a tiny synthetic dataset.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use flowsvc::pipeline::toy::{default_speakers, generate_dataset};
use flowsvc::pipeline::PipelineConfig;

pub const SMALL: &str = r#"
seed = 3

[model]
d_z = 16
hidden = 16
posterior_layers = 2
flow_blocks = 2
flow_layers = 2
prior_layers = 2
decoder_channels = [32, 16, 8]
disc_channels = [4, 8, 8, 8]

[train]
batch_size = 2
segment_frames = 16
checkpoint_interval = 2

[optim]
total_steps = 4
"#;

pub fn small_config() -> PipelineConfig {
    PipelineConfig::parse(SMALL).expect("fixture config parses")
}

/// Two speakers, two one-second clips each.
pub fn tiny_dataset(dir: &Path) -> Vec<PathBuf> {
    generate_dataset(dir, &default_speakers(), 2, 1.0, 5).expect("toy dataset")
}
