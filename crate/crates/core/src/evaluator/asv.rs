use crate::domain::SpeakerEmbedding;
use crate::error::{Error, Result};

/// Threshold used when none is configured and no calibration data exists.
pub const DEFAULT_ASV_THRESHOLD: f64 = 0.5;

/// Percentage of trials whose cosine similarity reaches `threshold`.
pub fn asv_accept_rate(trials: &[(SpeakerEmbedding, SpeakerEmbedding)], threshold: f64) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("ASV trials"));
    }
    let mut accepted = 0usize;
    for (a, b) in trials {
        if a.cosine(b)? >= threshold {
            accepted += 1;
        }
    }
    Ok(100.0 * accepted as f64 / trials.len() as f64)
}

/// Equal-error-rate operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerCalibration {
    pub threshold: f64,
    pub eer: f64,
}

/// Chooses the candidate threshold (each observed score) where the false
/// acceptance and false rejection rates are closest; `eer` is their mean.
pub fn eer_threshold(genuine: &[f64], impostor: &[f64]) -> Result<EerCalibration> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyInput("genuine and impostor scores"));
    }
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(f64::total_cmp);
    let mut best: Option<(f64, EerCalibration)> = None;
    for &t in &candidates {
        let far = impostor.iter().filter(|s| **s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|s| **s < t).count() as f64 / genuine.len() as f64;
        let gap = (far - frr).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, EerCalibration { threshold: t, eer: (far + frr) / 2.0 }));
        }
    }
    Ok(best.expect("non-empty candidates").1)
}

/// Genuine (same speaker) and impostor (different speaker) cosine scores
/// over all unordered pairs of labelled embeddings.
pub fn build_trials(labelled: &[(String, SpeakerEmbedding)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (i, (si, ei)) in labelled.iter().enumerate() {
        for (sj, ej) in &labelled[i + 1..] {
            let score = ei.cosine(ej)?;
            if si == sj {
                genuine.push(score);
            } else {
                impostor.push(score);
            }
        }
    }
    Ok((genuine, impostor))
}
