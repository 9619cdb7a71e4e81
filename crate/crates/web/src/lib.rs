//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Exposed operations:
//! - `renderVoice`: a synthetic singer with its log-mel spectrogram;
//! - `shiftContour`: F0 tracking of a source and target with the shifted contour;
//! - `pqmfResponse`: magnitude responses of the PQMF analysis filters.

use std::f64::consts::PI;

use wasm_bindgen::prelude::*;

use flowsvc::dsp::{mel_spectrogram, PqmfBank, StftConfig};
use flowsvc::features::{shift_f0, track_f0};
use flowsvc::pipeline::toy::{default_speakers, toy_clip};

const MEL_BANDS: usize = 80;
const MAX_SECONDS: f64 = 4.0;

fn js(e: flowsvc::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn check_seconds(seconds: f64) -> flowsvc::Result<()> {
    if seconds > 0.0 && seconds <= MAX_SECONDS {
        Ok(())
    } else {
        Err(flowsvc::Error::InvalidInput(format!("duration must be in (0, {MAX_SECONDS}] s")))
    }
}

fn speaker(index: usize) -> flowsvc::Result<flowsvc::pipeline::toy::ToySpeaker> {
    default_speakers()
        .into_iter()
        .nth(index)
        .ok_or_else(|| flowsvc::Error::InvalidInput(format!("no toy speaker {index}")))
}

/// Audio and log-mel spectrogram of one synthetic clip.
#[wasm_bindgen]
pub struct VoiceRender {
    samples: Vec<f32>,
    mel: Vec<f32>,
    frames: usize,
}

#[wasm_bindgen]
impl VoiceRender {
    /// 16 kHz mono samples.
    pub fn samples(&self) -> Vec<f32> {
        self.samples.clone()
    }

    /// Log-mel values, frame-major (`frames x bands`).
    pub fn mel(&self) -> Vec<f32> {
        self.mel.clone()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        MEL_BANDS
    }
}

pub fn render_voice(speaker_index: usize, f0_mean: f64, seconds: f64, seed: u64) -> flowsvc::Result<VoiceRender> {
    check_seconds(seconds)?;
    let audio = toy_clip(&speaker(speaker_index)?, f0_mean, seconds, 0, seed);
    let mel = mel_spectrogram(&audio, &StftConfig::default(), MEL_BANDS)?;
    Ok(VoiceRender {
        samples: audio.samples.iter().map(|&s| s as f32).collect(),
        mel: mel.values.iter().map(|&v| v as f32).collect(),
        frames: mel.frames,
    })
}

/// Renders toy speaker `speaker_index` (0 or 1) singing around `f0_mean` Hz.
#[wasm_bindgen(js_name = renderVoice)]
pub fn render_voice_js(speaker_index: usize, f0_mean: f64, seconds: f64, seed: u64) -> Result<VoiceRender, JsError> {
    render_voice(speaker_index, f0_mean, seconds, seed).map_err(js)
}

/// Tracked source and target contours and the shifted source contour, in Hz
/// per frame with 0 for unvoiced frames.
#[wasm_bindgen]
pub struct F0Shift {
    source: Vec<f64>,
    target: Vec<f64>,
    shifted: Vec<f64>,
}

#[wasm_bindgen]
impl F0Shift {
    pub fn source(&self) -> Vec<f64> {
        self.source.clone()
    }

    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    pub fn shifted(&self) -> Vec<f64> {
        self.shifted.clone()
    }
}

pub fn shift_contour(source_mean: f64, target_mean: f64, seconds: f64) -> flowsvc::Result<F0Shift> {
    check_seconds(seconds)?;
    let cfg = StftConfig::default();
    let source = track_f0(&toy_clip(&speaker(0)?, source_mean, seconds, 0, 1), &cfg)?;
    let target = track_f0(&toy_clip(&speaker(1)?, target_mean, seconds, 1, 2), &cfg)?;
    let shifted = shift_f0(&source, &target)?;
    Ok(F0Shift {
        source: source.f0_hz,
        target: target.f0_hz,
        shifted: shifted.f0_hz,
    })
}

/// Tracks a toy source around `source_mean` Hz and a toy target around
/// `target_mean` Hz, then shifts the source by the difference of voiced means.
#[wasm_bindgen(js_name = shiftContour)]
pub fn shift_contour_js(source_mean: f64, target_mean: f64, seconds: f64) -> Result<F0Shift, JsError> {
    shift_contour(source_mean, target_mean, seconds).map_err(js)
}

/// Magnitude responses in dB of the analysis filters, `streams x points`
/// row-major, sampled uniformly on `[0, 8000)` Hz.
#[wasm_bindgen(js_name = pqmfResponse)]
pub fn pqmf_response(points: usize) -> Vec<f64> {
    let bank = PqmfBank::default_bank();
    let mut out = Vec::with_capacity(bank.num_streams * points);
    for taps in &bank.analysis {
        for p in 0..points {
            let w = PI * p as f64 / points as f64;
            let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
                (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
            });
            out.push(20.0 * (re.hypot(im)).max(1e-12).log10());
        }
    }
    out
}

#[wasm_bindgen(js_name = pqmfStreams)]
pub fn pqmf_streams() -> usize {
    PqmfBank::default_bank().num_streams
}
