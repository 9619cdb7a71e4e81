//! Speaker-embedding export for offline visualization.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use super::config::PipelineConfig;
use super::dataset::list_wavs;
use crate::dsp::mel::mel_spectrogram;
use crate::dsp::wav::read_wav;
use crate::error::{Error, Result};
use crate::features::speaker::{embed_speaker, SpeakerEmbedding};
use crate::model::Model;

#[derive(Debug, Default)]
pub struct EmbeddingExport {
    pub rows: Vec<(String, SpeakerEmbedding)>,
    pub errors: Vec<(PathBuf, Error)>,
}

impl EmbeddingExport {
    /// `id,v0,...,v255` per row, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (id, e) in &self.rows {
            out.push_str(id);
            for v in e.values() {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Embeds every WAV in `wav_dir`; unreadable files are collected as errors.
pub fn export_embeddings(cfg: &PipelineConfig, model: &Model<f32>, wav_dir: &Path) -> Result<EmbeddingExport> {
    let stft = cfg.stft_config()?;
    let mut export = EmbeddingExport::default();
    for wav in list_wavs(wav_dir)? {
        let result = read_wav(&wav)
            .and_then(|a| mel_spectrogram(&a, &stft, cfg.stft.mel_bands))
            .and_then(|mel| embed_speaker(&mel, &model.store));
        match result {
            Ok(e) => {
                let id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                export.rows.push((id, e));
            }
            Err(e) => {
                warn!("skipping {}: {e}", wav.display());
                export.errors.push((wav, e));
            }
        }
    }
    Ok(export)
}

pub fn write_csv(export: &EmbeddingExport, out: &Path) -> Result<()> {
    let mut f = std::fs::File::create(out)?;
    f.write_all(export.to_csv().as_bytes())?;
    Ok(())
}
