//! Per-utterance feature extraction with an on-disk cache.
//!
//! Each WAV gets five RAFE files in the cache directory (mel, linear
//! magnitudes, F0, content, emotion) and a key file holding the SHA-256 of
//! the WAV bytes and feature settings, provider side files included. A
//! cache entry is reused when its key matches.

use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use super::config::{EmotionProvider, PipelineConfig};
use crate::dsp::mel::{log_mel_from_spectrogram, MelFilterbank, MelSpectrogram};
use crate::dsp::stft::stft;
use crate::dsp::wav::read_wav;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::content::{content_from_file, mfcc_content, ContentFrames, ContentProvider, CONTENT_SOURCE_DIM};
use crate::features::emotion::EmotionEmbedding;
use crate::features::f0::{track_f0, F0Contour};
use crate::features::rafe::FeatureFile;
use crate::features::speaker::mel_stats;

/// One utterance with every feature aligned to the same STFT grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: PathBuf,
    /// File-name prefix before the first `_`; bookkeeping only.
    pub speaker: String,
    pub audio: AudioBuffer,
    pub frames: usize,
    pub mel: MelSpectrogram,
    /// `bins x frames` magnitudes, channel-major.
    pub linear: Vec<f64>,
    pub bins: usize,
    pub f0: F0Contour,
    pub content: ContentFrames,
    pub emotion: EmotionEmbedding,
    /// Pooled mel statistics of the whole utterance.
    pub speaker_stats: Vec<f64>,
}

/// Outcome of a batch extraction.
#[derive(Debug, Default)]
pub struct ExtractReport {
    pub records: Vec<UtteranceRecord>,
    pub computed: usize,
    pub cache_hits: usize,
    pub errors: Vec<(PathBuf, Error)>,
}

impl ExtractReport {
    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Sorted `*.wav` files directly inside `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn side_file(wav: &Path, kind: &str) -> PathBuf {
    wav.with_file_name(format!("{}.{kind}.rafe", stem(wav)))
}

/// Features of one utterance, computed from scratch.
pub fn compute_features(cfg: &PipelineConfig, audio: &AudioBuffer, wav: Option<&Path>) -> Result<Features> {
    let stft_cfg = cfg.stft_config()?;
    let spec = stft(audio, &stft_cfg)?;
    let bank = MelFilterbank::new(cfg.stft.mel_bands, stft_cfg.n_fft, audio.sample_rate)?;
    let mel = log_mel_from_spectrogram(&spec, &bank)?;
    let f0 = track_f0(audio, &stft_cfg)?;
    let content = match (cfg.content_provider()?, wav) {
        (ContentProvider::Mfcc, _) => mfcc_content(&mel),
        (ContentProvider::File, Some(w)) => content_from_file(&side_file(w, "content"), spec.frames)?,
        (ContentProvider::File, None) => {
            return Err(Error::InvalidInput("file content provider needs a WAV path".into()))
        }
    };
    let emotion = match (cfg.emotion_provider()?, wav) {
        (EmotionProvider::None, _) => EmotionEmbedding::none(),
        (EmotionProvider::File, Some(w)) => EmotionEmbedding::load(Some(&side_file(w, "emotion")))?,
        (EmotionProvider::File, None) => {
            return Err(Error::InvalidInput("file emotion provider needs a WAV path".into()))
        }
    };
    Ok(Features {
        frames: spec.frames,
        bins: spec.bins,
        linear: spec.magnitudes_channel_major(),
        mel,
        f0,
        content,
        emotion,
    })
}

/// Frame-level features without the audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub frames: usize,
    pub bins: usize,
    pub linear: Vec<f64>,
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
    pub content: ContentFrames,
    pub emotion: EmotionEmbedding,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

struct CachePaths {
    key: PathBuf,
    mel: PathBuf,
    linear: PathBuf,
    f0: PathBuf,
    content: PathBuf,
    emotion: PathBuf,
}

impl CachePaths {
    fn new(cache: &Path, id: &str) -> Self {
        let p = |kind: &str| cache.join(format!("{id}.{kind}.rafe"));
        Self {
            key: cache.join(format!("{id}.key")),
            mel: p("mel"),
            linear: p("linear"),
            f0: p("f0"),
            content: p("content"),
            emotion: p("emotion"),
        }
    }
}

fn cache_key(cfg: &PipelineConfig, wav: &Path, bytes: &[u8]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(cfg.feature_hash().as_bytes());
    h.update(bytes);
    for kind in ["content", "emotion"] {
        let side = side_file(wav, kind);
        if side.exists() {
            h.update(kind.as_bytes());
            h.update(std::fs::read(&side)?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn write_cache(paths: &CachePaths, f: &Features, key: &str) -> Result<()> {
    // Mel is written frames x bands, linear bins x frames.
    FeatureFile {
        frames: f.frames,
        dim: f.mel.mel_bands,
        values: to_f32(&f.mel.values),
    }
    .write(&paths.mel)?;
    FeatureFile {
        frames: f.bins,
        dim: f.frames,
        values: to_f32(&f.linear),
    }
    .write(&paths.linear)?;
    FeatureFile {
        frames: f.frames,
        dim: 1,
        values: to_f32(&f.f0.f0_hz),
    }
    .write(&paths.f0)?;
    FeatureFile {
        frames: f.frames,
        dim: f.content.dim,
        values: to_f32(&f.content.values),
    }
    .write(&paths.content)?;
    FeatureFile {
        frames: 0,
        dim: f.emotion.values.len(),
        values: to_f32(&f.emotion.values),
    }
    .write(&paths.emotion)?;
    std::fs::write(&paths.key, key)?;
    Ok(())
}

fn read_cache(paths: &CachePaths) -> Result<Features> {
    let mel = FeatureFile::read(&paths.mel)?;
    let lin = FeatureFile::read(&paths.linear)?;
    let f0 = FeatureFile::read(&paths.f0)?;
    let content = FeatureFile::read(&paths.content)?;
    let emotion = FeatureFile::read(&paths.emotion)?;
    let frames = mel.frames;
    if lin.dim != frames || f0.frames != frames || content.frames != frames || content.dim != CONTENT_SOURCE_DIM {
        return Err(Error::FeatureAlignment(format!(
            "cached features disagree on frame count near {}",
            paths.mel.display()
        )));
    }
    Ok(Features {
        frames,
        bins: lin.frames,
        linear: to_f64(&lin.values),
        mel: MelSpectrogram {
            frames,
            mel_bands: mel.dim,
            values: to_f64(&mel.values),
        },
        f0: F0Contour::from_hz(to_f64(&f0.values))?,
        content: ContentFrames {
            frames,
            dim: content.dim,
            values: to_f64(&content.values),
        },
        emotion: EmotionEmbedding::from_vector(&to_f64(&emotion.values))?,
    })
}

/// Extracts (or reuses) the features of one file; `true` on a cache hit.
fn process_one(cfg: &PipelineConfig, cache: &Path, wav: &Path) -> Result<(UtteranceRecord, bool)> {
    let bytes = std::fs::read(wav)?;
    let audio = read_wav(wav)?;
    let id = stem(wav);
    let paths = CachePaths::new(cache, &id);
    let key = cache_key(cfg, wav, &bytes)?;
    let hit = std::fs::read_to_string(&paths.key).is_ok_and(|k| k == key);
    if !hit {
        let f = compute_features(cfg, &audio, Some(wav))?;
        write_cache(&paths, &f, &key)?;
    }
    // Always read back, so fresh and cached runs see identical values.
    let f = read_cache(&paths)?;
    let speaker_stats = mel_stats(&f.mel)?;
    let speaker = id.split('_').next().unwrap_or(&id).to_string();
    Ok((
        UtteranceRecord {
            id,
            audio_path: wav.to_path_buf(),
            speaker,
            audio,
            frames: f.frames,
            mel: f.mel,
            linear: f.linear,
            bins: f.bins,
            f0: f.f0,
            content: f.content,
            emotion: f.emotion,
            speaker_stats,
        },
        hit,
    ))
}

/// Runs feature extraction over every WAV in `wav_dir`. Per-file failures
/// are logged and collected; the batch continues.
pub fn extract_features(cfg: &PipelineConfig, wav_dir: &Path) -> Result<ExtractReport> {
    let cache = cfg.cache_dir(wav_dir);
    std::fs::create_dir_all(&cache)?;
    let mut report = ExtractReport::default();
    for wav in list_wavs(wav_dir)? {
        match process_one(cfg, &cache, &wav) {
            Ok((rec, hit)) => {
                if hit {
                    report.cache_hits += 1;
                } else {
                    report.computed += 1;
                }
                report.records.push(rec);
            }
            Err(e) => {
                warn!("skipping {}: {e}", wav.display());
                report.errors.push((wav, e));
            }
        }
    }
    info!(
        "{} records ({} computed, {} cached, {} failed)",
        report.records.len(),
        report.computed,
        report.cache_hits,
        report.errors.len()
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wav::write_wav;
    use crate::pipeline::toy::{default_speakers, toy_clip};

    fn write_clips(dir: &Path, n: usize) {
        let spk = &default_speakers()[0];
        for i in 0..n {
            write_wav(&dir.join(format!("spk0_c{i}.wav")), &toy_clip(spk, 220.0, 0.5, i, i as u64)).unwrap();
        }
    }

    #[test]
    fn extraction_is_aligned_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write_clips(dir.path(), 3);
        let cfg = PipelineConfig::default();
        let first = extract_features(&cfg, dir.path()).unwrap();
        assert_eq!((first.records.len(), first.computed, first.cache_hits), (3, 3, 0));
        for r in &first.records {
            assert_eq!(r.frames, 1 + r.audio.len() / 128);
            assert_eq!(r.mel.frames, r.frames);
            assert_eq!(r.linear.len(), 257 * r.frames);
            assert_eq!(r.f0.frames(), r.frames);
            assert_eq!(r.content.frames, r.frames);
            assert_eq!(r.speaker, "spk0");
        }
        let second = extract_features(&cfg, dir.path()).unwrap();
        assert_eq!((second.computed, second.cache_hits), (0, 3));
        assert_eq!(first.records, second.records);
    }

    #[test]
    fn corrupt_file_is_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_clips(dir.path(), 2);
        std::fs::write(dir.path().join("spk0_bad.wav"), b"RIFF nonsense").unwrap();
        let report = extract_features(&PipelineConfig::default(), dir.path()).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.errors.len(), 1);
        assert!(report.is_partial());
        assert_eq!(report.errors[0].1.exit_code(), 2);
    }
}
