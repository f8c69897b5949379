use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Number of mel bins in every [`MelSpectrogram`].
pub const MEL_BINS: usize = 80;

pub const SUPPORTED_SAMPLE_RATES: [u32; 5] = [16000, 22050, 24000, 44100, 48000];

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    /// Fails unless the waveform is non-empty, finite and at `rate`.
    pub fn check_processable(&self, rate: u32) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        if self.sample_rate != rate {
            return Err(Error::InvalidInput(format!(
                "waveform is at {} Hz, expected working rate {} Hz",
                self.sample_rate, rate
            )));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(())
    }
}

/// Frame-rate content representation produced by a recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f32>,
    frame_shift_ms: f32,
    source_name: String,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f32>, frame_shift_ms: f32, source_name: impl Into<String>) -> Result<Self> {
        let (t, d) = frames.dim();
        if t == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "feature sequence must be at least 1x1, got {t}x{d}"
            )));
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame shift must be positive, got {frame_shift_ms}"
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature frames"));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
            source_name: source_name.into(),
        })
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn with_source_name(mut self, name: impl Into<String>) -> Self {
        self.source_name = name.into();
        self
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }
}

/// `T x 80` log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Array2<f32>,
    frame_shift_ms: f32,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f32>, frame_shift_ms: f32) -> Result<Self> {
        if frames.ncols() != MEL_BINS {
            return Err(Error::DimMismatch {
                expected: MEL_BINS,
                found: frames.ncols(),
            });
        }
        if frames.nrows() == 0 {
            return Err(Error::EmptyInput("mel-spectrogram"));
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame shift must be positive, got {frame_shift_ms}"
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel-spectrogram"));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
        })
    }

    /// Like [`MelSpectrogram::new`], clamping every entry at `ln(floor)`.
    pub fn floored(mut frames: Array2<f32>, frame_shift_ms: f32, floor: f64) -> Result<Self> {
        let min = floor.ln() as f32;
        frames.mapv_inplace(|v| if v < min { min } else { v });
        Self::new(frames, frame_shift_ms)
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    pub fn to_features(&self, source_name: &str) -> FeatureSequence {
        FeatureSequence {
            frames: self.frames.clone(),
            frame_shift_ms: self.frame_shift_ms,
            source_name: source_name.to_string(),
        }
    }

    pub fn from_features(seq: &FeatureSequence) -> Result<Self> {
        Self::new(seq.frames.clone(), seq.frame_shift_ms)
    }
}

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Array1<f64>,
}

impl SpeakerEmbedding {
    /// Normalizes `vector` to unit length.
    pub fn new(vector: impl Into<Array1<f64>>) -> Result<Self> {
        let mut vector = vector.into();
        if vector.is_empty() {
            return Err(Error::EmptyInput("speaker embedding"));
        }
        let norm = vector.dot(&vector).sqrt();
        if !norm.is_finite() || norm <= f64::EPSILON {
            return Err(Error::DegenerateEmbedding);
        }
        vector /= norm;
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &Array1<f64> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self.vector.dot(&other.vector))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn embedding_is_normalized() {
        let e = SpeakerEmbedding::new(vec![3.0, 4.0]).unwrap();
        assert!((e.vector().dot(e.vector()) - 1.0).abs() < 1e-12);
        assert!(matches!(
            SpeakerEmbedding::new(vec![0.0, 0.0]),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn feature_sequence_rejects_bad_shapes() {
        assert!(FeatureSequence::new(Array2::zeros((0, 3)), 10.0, "x").is_err());
        assert!(FeatureSequence::new(array![[1.0]], 0.0, "x").is_err());
        assert!(FeatureSequence::new(array![[f32::NAN]], 10.0, "x").is_err());
        assert!(FeatureSequence::new(array![[0.0]], 10.0, "x").is_ok());
    }

    #[test]
    fn floored_mel_clamps() {
        let m = MelSpectrogram::floored(Array2::from_elem((2, MEL_BINS), -100.0), 10.0, 1e-10).unwrap();
        assert!(m.frames().iter().all(|&v| v == (1e-10f64).ln() as f32));
    }
}
