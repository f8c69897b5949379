use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub wav_path: PathBuf,
    pub transcript: Option<String>,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestRole {
    TargetSpeaker,
    MultiSpeaker,
    SourceEval,
}

impl fmt::Display for ManifestRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ManifestRole::TargetSpeaker => "target_speaker",
            ManifestRole::MultiSpeaker => "multi_speaker",
            ManifestRole::SourceEval => "source_eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<UtteranceRecord>,
    role: ManifestRole,
}

impl DatasetManifest {
    /// Checks id uniqueness and the speaker-count rule for `role`.
    pub fn new(records: Vec<UtteranceRecord>, role: ManifestRole) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert(r.utt_id.as_str(), i + 1) {
                return Err(Error::DuplicateUttId {
                    utt_id: r.utt_id.clone(),
                    line: i + 1,
                    first_line: first,
                });
            }
        }
        let manifest = Self { records, role };
        manifest.check_role()?;
        Ok(manifest)
    }

    fn check_role(&self) -> Result<()> {
        let n = self.speakers().len();
        let bad = |message: String| Error::ManifestRole {
            role: self.role.to_string(),
            message,
        };
        match self.role {
            ManifestRole::TargetSpeaker if n > 1 => {
                Err(bad(format!("expected exactly one speaker, found {n}")))
            }
            ManifestRole::MultiSpeaker if n == 1 => Err(Error::SingleSpeakerManifest),
            _ => Ok(()),
        }
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn role(&self) -> ManifestRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Returns the utt_ids whose audio file does not exist.
    pub fn missing_audio(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| !r.wav_path.is_file())
            .map(|r| r.utt_id.clone())
            .collect()
    }

    /// Serializes as JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

const REQUIRED_FIELDS: [&str; 5] = ["utt_id", "speaker_id", "wav_path", "transcript", "language"];

/// Parses JSON-lines text. Relative `wav_path`s are resolved against `base_dir`.
pub fn parse_manifest(text: &str, role: ManifestRole, base_dir: Option<&Path>) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
                line,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::ManifestParse {
            line,
            message: "expected a JSON object".into(),
        })?;
        for field in REQUIRED_FIELDS {
            if !obj.contains_key(field) {
                return Err(Error::MissingField {
                    line,
                    field: field.into(),
                });
            }
        }
        let mut record: UtteranceRecord =
            serde_json::from_value(value).map_err(|e| Error::ManifestParse {
                line,
                message: e.to_string(),
            })?;
        if let Some(&first_line) = first_seen.get(&record.utt_id) {
            return Err(Error::DuplicateUttId {
                utt_id: record.utt_id,
                line,
                first_line,
            });
        }
        first_seen.insert(record.utt_id.clone(), line);
        if let Some(base) = base_dir {
            if record.wav_path.is_relative() {
                record.wav_path = base.join(&record.wav_path);
            }
        }
        records.push(record);
    }
    DatasetManifest::new(records, role)
}

pub fn load_manifest(path: impl AsRef<Path>, role: ManifestRole) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, role, path.parent())
}
