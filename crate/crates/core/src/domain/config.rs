//! TOML configuration with four sections: `audio`, `model`, `training`,
//! `evaluation`. Every key is optional; unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    /// Working sample rate; ingested audio is resampled to it.
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    /// 240 samples = 10 ms at 24 kHz.
    pub hop_length: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Mel energies are clamped at this value before the log.
    pub log_floor: f64,
    pub griffin_lim_iters: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 240,
            f_min: 0.0,
            f_max: 12000.0,
            log_floor: 1e-10,
            griffin_lim_iters: 32,
        }
    }
}

impl AudioConfig {
    pub fn frame_shift_ms(&self) -> f32 {
        (self.hop_length as f64 * 1000.0 / self.sample_rate as f64) as f32
    }

    pub fn log_floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("audio: {m}")));
        if !super::types::SUPPORTED_SAMPLE_RATES.contains(&self.sample_rate) {
            return bad("unsupported sample_rate");
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad("win_length must be in 1..=n_fft");
        }
        if self.hop_length == 0 {
            return bad("hop_length must be positive");
        }
        if !(self.f_min >= 0.0 && self.f_max > self.f_min && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= f_min < f_max <= sample_rate / 2");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderType {
    Simple,
    SimpleAr,
    Taco2Ar,
}

impl DecoderType {
    pub fn is_autoregressive(self) -> bool {
        !matches!(self, DecoderType::Simple)
    }

    pub const ALL: [DecoderType; 3] = [DecoderType::Simple, DecoderType::SimpleAr, DecoderType::Taco2Ar];
}

impl fmt::Display for DecoderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderType::Simple => "simple",
            DecoderType::SimpleAr => "simple_ar",
            DecoderType::Taco2Ar => "taco2_ar",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "type")]
    pub decoder: DecoderType,
    pub hidden_dim: usize,
    pub lstmp_proj_dim: usize,
    pub prenet_dims: Vec<usize>,
    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub ar_dropout: f64,
    pub speaker_conditioned: bool,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderType::Taco2Ar,
            hidden_dim: 256,
            lstmp_proj_dim: 256,
            prenet_dims: vec![256, 256],
            postnet_layers: 5,
            postnet_channels: 256,
            postnet_kernel: 5,
            ar_dropout: 0.5,
            speaker_conditioned: false,
            embedding_dim: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub grad_clip: f64,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            steps: 10_000,
            grad_clip: 1.0,
            checkpoint_interval: 1_000,
            log_interval: 100,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub mcd_order: usize,
    /// Cosine-similarity accept threshold. When unset, it is calibrated as the
    /// equal-error-rate point of a genuine/impostor trial list.
    pub asv_threshold: Option<f64>,
    /// Dropout seed used for free-running generation.
    pub dropout_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            mcd_order: 24,
            asv_threshold: None,
            dropout_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "audio",
        &["sample_rate", "n_fft", "win_length", "hop_length", "f_min", "f_max", "log_floor", "griffin_lim_iters"],
    ),
    (
        "model",
        &[
            "type",
            "hidden_dim",
            "lstmp_proj_dim",
            "prenet_dims",
            "postnet_layers",
            "postnet_channels",
            "postnet_kernel",
            "ar_dropout",
            "speaker_conditioned",
            "embedding_dim",
        ],
    ),
    (
        "training",
        &[
            "learning_rate",
            "batch_size",
            "steps",
            "grad_clip",
            "checkpoint_interval",
            "log_interval",
            "seed",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
        ],
    ),
    ("evaluation", &["mcd_order", "asv_threshold", "dropout_seed"]),
];

fn all_keys() -> impl Iterator<Item = String> {
    KNOWN_KEYS
        .iter()
        .flat_map(|(s, keys)| keys.iter().map(move |k| format!("{s}.{k}")))
}

fn unknown_key(key: String) -> Error {
    let nearest = all_keys()
        .map(|k| (strsim::levenshtein(&k, &key), k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| format!("did you mean `{k}`?"));
    let lower = key.to_ascii_lowercase();
    let hint = if ["atten", "aten", "tention", "attn"].iter().any(|p| lower.contains(p)) {
        let note = "decoders are attention-free; there are no attention settings";
        Some(match nearest {
            Some(n) => format!("{note}; {n}"),
            None => note.to_string(),
        })
    } else {
        nearest
    };
    Error::UnknownConfigKey { key, hint }
}

fn check_keys(table: &toml::Table) -> Result<()> {
    for (section, value) in table {
        let Some((_, keys)) = KNOWN_KEYS.iter().find(|(s, _)| s == section) else {
            return Err(unknown_key(section.clone()));
        };
        let Some(inner) = value.as_table() else {
            return Err(Error::ConfigType {
                key: section.clone(),
                message: "expected a section".into(),
            });
        };
        for key in inner.keys() {
            if !keys.contains(&key.as_str()) {
                return Err(unknown_key(format!("{section}.{key}")));
            }
        }
    }
    Ok(())
}

/// Parses configuration text, filling documented defaults for absent keys.
pub fn parse_config(text: &str) -> Result<AppConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigType {
        key: "<document>".into(),
        message: e.to_string(),
    })?;
    check_keys(&table)?;
    let config: AppConfig = AppConfig::deserialize(toml::Value::Table(table)).map_err(|e| {
        Error::ConfigType {
            key: type_error_key(&e.to_string()),
            message: e.to_string(),
        }
    })?;
    config.audio.validate()?;
    Ok(config)
}

fn type_error_key(message: &str) -> String {
    // toml reports e.g. "invalid type: ... for key `model.hidden_dim`"
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<unknown>".into())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<AppConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, AppConfig::default());
        assert_eq!(c.audio.sample_rate, 24000);
        assert_eq!(c.audio.hop_length, 240);
        assert_eq!(c.model.decoder, DecoderType::Taco2Ar);
        assert_eq!(c.training.learning_rate, 1e-4);
        assert_eq!(c.training.batch_size, 8);
        assert!((c.audio.frame_shift_ms() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn single_override() {
        let c = parse_config("[model]\ntype = \"simple_ar\"\n").unwrap();
        assert_eq!(c.model.decoder, DecoderType::SimpleAr);
        let c = parse_config("[model]\ntype = \"taco2_ar\"\nhidden_dim = 64\n").unwrap();
        assert_eq!(c.model.decoder, DecoderType::Taco2Ar);
        assert_eq!(c.model.hidden_dim, 64);
    }

    #[test]
    fn misspelled_attention_key() {
        let err = parse_config("[model]\natention = 1\n").unwrap_err();
        match &err {
            Error::UnknownConfigKey { key, hint } => {
                assert_eq!(key, "model.atention");
                assert!(hint.as_deref().unwrap().contains("attention-free"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn near_miss_suggests_nearest_key() {
        match parse_config("[training]\nlearning_rat = 0.1\n").unwrap_err() {
            Error::UnknownConfigKey { hint, .. } => {
                assert_eq!(hint.as_deref(), Some("did you mean `training.learning_rate`?"))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_config("[vocoder]\nx = 1\n"), Err(Error::UnknownConfigKey { .. })));
    }

    #[test]
    fn type_mismatch() {
        assert!(matches!(
            parse_config("[model]\nhidden_dim = \"big\"\n"),
            Err(Error::ConfigType { .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_config("/nonexistent/cfg.toml"), Err(Error::Io { .. })));
    }

    #[test]
    fn loading_twice_is_equal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[audio]\ngriffin_lim_iters = 8\n[evaluation]\nasv_threshold = 0.7\n").unwrap();
        assert_eq!(load_config(&p).unwrap(), load_config(&p).unwrap());
    }
}
