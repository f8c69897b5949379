//! Recognition-synthesis voice conversion.
//!
//! Source speech is mapped to a frame-level content representation by a
//! recognizer (native log-mel, or features produced by an external
//! self-supervised extractor), decoded to a target-speaker mel-spectrogram by
//! one of three attention-free decoders, and vocoded back to audio. The
//! [`evaluator`] module scores conversions with DTW-aligned mel-cepstral
//! distortion, word error rate and speaker-verification accept rate, and runs
//! the metric correlation study.

pub mod converter;
pub mod domain;
pub mod dsp;
pub mod error;
pub mod evaluator;
pub mod recognizer;
pub mod synthesizer;
pub mod toy;
pub mod trainer;

pub use domain::{
    AppConfig, AudioConfig, DatasetManifest, FeatureSequence, ManifestRole, MelSpectrogram,
    SpeakerEmbedding, UtteranceRecord, Waveform,
};
pub use error::{Error, Result};
