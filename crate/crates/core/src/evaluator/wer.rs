use std::path::Path;

use crate::converter::run_adapter;
use crate::error::{Error, Result};

/// Uppercases, removes punctuation other than apostrophes and splits on whitespace.
pub fn normalize_transcript(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| *c == '\'' || !(c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())))
        .collect::<String>()
        .to_uppercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Minimal number of substitutions, deletions and insertions turning `reference` into `hypothesis`.
pub fn word_errors<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    for (i, r) in reference.iter().enumerate() {
        let mut row = vec![i + 1; hypothesis.len() + 1];
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        prev = row;
    }
    prev[hypothesis.len()]
}

/// Word error rate in percent.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference transcript"));
    }
    Ok(100.0 * word_errors(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Speech recognizer used for intelligibility scoring.
pub trait Transcriber: Sync {
    /// Normalized token list for the audio at `wav_path`.
    fn transcribe(&self, utt_id: &str, wav_path: &Path) -> Result<Vec<String>>;
}

/// Runs `command <input.wav>` and reads the transcript from stdout.
#[derive(Debug, Clone)]
pub struct ExternalTranscriber {
    pub command: String,
}

impl Transcriber for ExternalTranscriber {
    fn transcribe(&self, utt_id: &str, wav_path: &Path) -> Result<Vec<String>> {
        let out = run_adapter(&self.command, &[wav_path])
            .map_err(|e| Error::AdapterForUtterance { utt_id: utt_id.to_string(), source: Box::new(e) })?;
        let text = String::from_utf8(out.stdout).map_err(|_| Error::AdapterForUtterance {
            utt_id: utt_id.to_string(),
            source: Box::new(Error::AdapterOutput { command: self.command.clone(), message: "transcript is not UTF-8".into() }),
        })?;
        Ok(normalize_transcript(&text))
    }
}
