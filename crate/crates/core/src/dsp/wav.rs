//! Mono PCM16 RIFF/WAVE reading and writing.

use std::path::Path;

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a 16 kHz mono PCM16 file into samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(path, "expected 16-bit integer PCM"));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!("sample rate {} Hz is not {SAMPLE_RATE} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e.to_string()))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Converts one sample to PCM16: clamp to `[-1, 1]`, scale by 32768,
/// round half away from zero, saturate.
pub fn to_pcm16(sample: f64) -> i16 {
    let v = (sample.clamp(-1.0, 1.0) * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in &audio.samples {
        writer
            .write_sample(to_pcm16(s))
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_conversion_rounds_half_away_and_clamps() {
        assert_eq!(to_pcm16(0.0), 0);
        assert_eq!(to_pcm16(1.5), i16::MAX);
        assert_eq!(to_pcm16(-2.0), i16::MIN);
        assert_eq!(to_pcm16(0.5 / 32768.0), 1);
        assert_eq!(to_pcm16(-0.5 / 32768.0), -1);
        assert_eq!(to_pcm16(0.49 / 32768.0), 0);
    }

    #[test]
    fn round_trip_is_exact_on_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-50..50).map(|i| i as f64 * 300.0 / 32768.0).collect();
        let audio = AudioBuffer::new(samples.clone(), 16000).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, samples);
        assert_eq!(back.sample_rate, 16000);
    }

    #[test]
    fn rejects_other_sample_rates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        write_wav(&path, &AudioBuffer::silence(100, 22050)).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        std::fs::write(&path, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
    }
}
