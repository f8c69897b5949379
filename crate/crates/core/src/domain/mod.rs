//! Shared domain types, dataset manifests, the S3VC feature container and
//! configuration loading.

mod audio;
mod config;
mod features;
mod manifest;
mod types;

pub use audio::{read_wav, resample, write_wav};
pub use config::{
    load_config, AppConfig, AudioConfig, DecoderType, EvaluationConfig, ModelConfig,
    TrainingConfig,
};
pub use features::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestRole, UtteranceRecord};
pub use types::{
    FeatureSequence, MelSpectrogram, SpeakerEmbedding, Waveform, MEL_BINS, SUPPORTED_SAMPLE_RATES,
};
