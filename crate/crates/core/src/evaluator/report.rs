use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::cepstra::{mcd, mel_cepstra};
use super::correlation::MetricsRow;
use super::wer::{normalize_transcript, word_errors, Transcriber};
use crate::converter::SpeakerEncoder;
use crate::domain::{read_wav, AudioConfig, SpeakerEmbedding};
use crate::error::{Error, Result};

/// One converted utterance to score.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub utt_id: String,
    pub converted_wav: PathBuf,
    /// Ground-truth target-speaker recording; `None` skips MCD.
    pub reference_wav: Option<PathBuf>,
    /// Reference text for WER.
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceScores {
    pub utt_id: String,
    pub mcd: Option<f64>,
    pub word_errors: Option<usize>,
    pub reference_words: Option<usize>,
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemScores {
    pub row: MetricsRow,
    pub asv_threshold: Option<f64>,
    pub utterances: Vec<UtteranceScores>,
}

/// ASV scoring setup: encoder, target-speaker embedding and threshold.
pub type AsvSetup<'a> = (&'a dyn SpeakerEncoder, &'a SpeakerEmbedding, f64);

/// Scores a system per utterance (in parallel) and aggregates: mean MCD,
/// corpus-level WER (total edits over total reference words) and the ASV
/// accept rate of converted-vs-target trials.
pub fn evaluate_system(
    system: &str,
    items: &[EvalItem],
    audio: &AudioConfig,
    mcd_order: usize,
    transcriber: Option<&dyn Transcriber>,
    asv: Option<AsvSetup<'_>>,
) -> Result<SystemScores> {
    if items.is_empty() {
        return Err(Error::EmptyInput("evaluation items"));
    }
    let utterances: Vec<UtteranceScores> = items
        .par_iter()
        .map(|item| {
            let wrap = |e: Error| Error::AdapterForUtterance { utt_id: item.utt_id.clone(), source: Box::new(e) };
            let converted = read_wav(&item.converted_wav, Some(audio.sample_rate))?;
            let mcd_value = match &item.reference_wav {
                Some(reference) => {
                    let reference = read_wav(reference, Some(audio.sample_rate))?;
                    Some(mcd(&mel_cepstra(&reference, audio, mcd_order)?, &mel_cepstra(&converted, audio, mcd_order)?)?)
                }
                None => None,
            };
            let (errors, words) = match (transcriber, &item.transcript) {
                (Some(t), Some(text)) => {
                    let reference = normalize_transcript(text);
                    let hypothesis = t.transcribe(&item.utt_id, &item.converted_wav)?;
                    (Some(word_errors(&reference, &hypothesis)), Some(reference.len()))
                }
                _ => (None, None),
            };
            let cosine = match asv {
                Some((encoder, target, _)) => {
                    let key = format!("{system}__{}", item.utt_id);
                    let e = encoder.embed(&key, &item.converted_wav).map_err(wrap)?;
                    Some(e.cosine(target)?)
                }
                None => None,
            };
            Ok(UtteranceScores { utt_id: item.utt_id.clone(), mcd: mcd_value, word_errors: errors, reference_words: words, cosine })
        })
        .collect::<Result<_>>()?;

    let mcds: Vec<f64> = utterances.iter().filter_map(|u| u.mcd).collect();
    let mcd_mean = (!mcds.is_empty()).then(|| mcds.iter().sum::<f64>() / mcds.len() as f64);
    let total_words: usize = utterances.iter().filter_map(|u| u.reference_words).sum();
    let total_errors: usize = utterances.iter().filter_map(|u| u.word_errors).sum();
    let wer = (total_words > 0).then(|| 100.0 * total_errors as f64 / total_words as f64);
    let asv_rate = match asv {
        Some((_, _, threshold)) => {
            let accepted = utterances.iter().filter(|u| u.cosine.is_some_and(|c| c >= threshold)).count();
            Some(100.0 * accepted as f64 / utterances.len() as f64)
        }
        None => None,
    };
    Ok(SystemScores {
        row: MetricsRow { system: system.to_string(), mcd: mcd_mean, wer, asv: asv_rate, naturalness: None, similarity: None },
        asv_threshold: asv.map(|a| a.2),
        utterances,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Tab-separated `system, MCD, WER, ASV` table with a header line.
pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("system\tMCD\tWER\tASV\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.system, cell(r.mcd), cell(r.wer), cell(r.asv)));
    }
    out
}
