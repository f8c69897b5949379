//! Content representation: native log-mel extraction, ingestion of
//! externally extracted features, and frame-rate alignment.

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{read_features, read_wav, AudioConfig, FeatureSequence, MelSpectrogram, UtteranceRecord, Waveform, MEL_BINS};
use crate::dsp::MelAnalyzer;
use crate::error::{Error, Result};

/// Name of the only natively computed upstream.
pub const NATIVE_UPSTREAM: &str = "mel";

/// Describes one upstream: the native log-mel extractor, or a directory of
/// `<utt_id>.s3vc` files written by an external extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamSpec {
    pub name: String,
    pub native: bool,
    pub feature_dim: usize,
    pub frame_shift_ms: f32,
    pub feature_dir: Option<PathBuf>,
}

impl UpstreamSpec {
    pub fn mel(audio: &AudioConfig) -> Self {
        Self {
            name: NATIVE_UPSTREAM.into(),
            native: true,
            feature_dim: MEL_BINS,
            frame_shift_ms: audio.frame_shift_ms(),
            feature_dir: None,
        }
    }

    pub fn external(name: impl Into<String>, feature_dim: usize, frame_shift_ms: f32, feature_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            native: false,
            feature_dim,
            frame_shift_ms,
            feature_dir: Some(feature_dir.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.native != (self.name == NATIVE_UPSTREAM) {
            return Err(Error::InvalidConfig(format!(
                "upstream `{}`: only `{NATIVE_UPSTREAM}` is computed natively",
                self.name
            )));
        }
        if self.feature_dim == 0 || !(self.frame_shift_ms > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "upstream `{}`: feature_dim and frame_shift_ms must be positive",
                self.name
            )));
        }
        if !self.native && self.feature_dir.is_none() {
            return Err(Error::InvalidConfig(format!(
                "upstream `{}` needs a feature directory",
                self.name
            )));
        }
        Ok(())
    }

    pub fn feature_path(&self, utt_id: &str) -> Option<PathBuf> {
        self.feature_dir.as_ref().map(|d| d.join(format!("{utt_id}.s3vc")))
    }
}

/// What a recognizer consumes: audio for the native path, a record for ingestion.
#[derive(Debug, Clone, Copy)]
pub enum RecognizerInput<'a> {
    Wave(&'a Waveform),
    Record(&'a UtteranceRecord),
}

/// Log-mel spectrogram of a working-rate waveform.
pub fn extract_mel(wave: &Waveform, audio: &AudioConfig) -> Result<MelSpectrogram> {
    let analyzer = MelAnalyzer::new(audio)?;
    extract_mel_with(&analyzer, wave)
}

pub fn extract_mel_with(analyzer: &MelAnalyzer, wave: &Waveform) -> Result<MelSpectrogram> {
    let audio = analyzer.config();
    wave.check_processable(audio.sample_rate)?;
    let samples: Vec<f64> = wave.samples().iter().map(|&s| s as f64).collect();
    let mel = analyzer.log_mel(&samples)?;
    MelSpectrogram::new(mel.mapv(|v| v as f32), audio.frame_shift_ms())
}

/// `H = Recog(X)`.
pub fn recognize(input: RecognizerInput<'_>, spec: &UpstreamSpec, audio: &AudioConfig) -> Result<FeatureSequence> {
    spec.validate()?;
    let seq = if spec.native {
        let mel = match input {
            RecognizerInput::Wave(wave) => extract_mel(wave, audio)?,
            RecognizerInput::Record(record) => extract_mel(&read_wav(&record.wav_path, Some(audio.sample_rate))?, audio)?,
        };
        mel.to_features(&spec.name)
    } else {
        let RecognizerInput::Record(record) = input else {
            return Err(Error::InvalidInput(format!(
                "upstream `{}` reads features by utterance id; pass a record",
                spec.name
            )));
        };
        let path = spec.feature_path(&record.utt_id).expect("validated");
        if !path.is_file() {
            return Err(Error::MissingFeatureFile {
                utt_id: record.utt_id.clone(),
                path,
            });
        }
        read_features(&path)?.with_source_name(&spec.name)
    };
    if seq.dim() != spec.feature_dim {
        return Err(Error::DimMismatch {
            expected: spec.feature_dim,
            found: seq.dim(),
        });
    }
    if !spec.native && (seq.frame_shift_ms() - spec.frame_shift_ms).abs() > 1e-4 * spec.frame_shift_ms {
        return Err(Error::InvalidInput(format!(
            "upstream `{}` declares {} ms frames but file has {} ms",
            spec.name,
            spec.frame_shift_ms,
            seq.frame_shift_ms()
        )));
    }
    Ok(seq)
}

/// Output length for a frame-rate change: `round_half_up(T * shift_in / shift_out)`.
pub fn resampled_len(num_frames: usize, shift_in: f32, shift_out: f32) -> usize {
    let exact = num_frames as f64 * shift_in as f64 / shift_out as f64;
    ((exact + 0.5).floor() as usize).max(1)
}

/// Linear interpolation along time with the last frame held past the right edge.
pub fn resample_features(seq: &FeatureSequence, target_shift_ms: f32) -> Result<FeatureSequence> {
    if !(target_shift_ms.is_finite() && target_shift_ms > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target frame shift must be positive, got {target_shift_ms}"
        )));
    }
    let shift_in = seq.frame_shift_ms();
    if shift_in == target_shift_ms {
        return Ok(seq.clone());
    }
    let input = seq.frames();
    let (t_in, dim) = input.dim();
    let t_out = resampled_len(t_in, shift_in, target_shift_ms);
    let ratio = target_shift_ms as f64 / shift_in as f64;
    let mut out = Array2::zeros((t_out, dim));
    for j in 0..t_out {
        let pos = j as f64 * ratio;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= t_in {
            out.row_mut(j).assign(&input.row(t_in - 1));
            continue;
        }
        let frac = pos - i0 as f64;
        for d in 0..dim {
            let (a, b) = (input[[i0, d]] as f64, input[[i0 + 1, d]] as f64);
            out[[j, d]] = ((1.0 - frac) * a + frac * b) as f32;
        }
    }
    FeatureSequence::new(out, target_shift_ms, seq.source_name())
}
