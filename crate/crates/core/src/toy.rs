//! Synthetic speech-like corpora for smoke tests and desk-scale runs.
//!
//! Each utterance is a chain of vowel-like segments: a harmonic source at the
//! speaker's pitch shaped by two formant resonances that glide between
//! segment targets. Speakers differ in pitch, formant scaling and spectral
//! tilt. Transcripts are the segment labels.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{write_wav, DatasetManifest, ManifestRole, UtteranceRecord, Waveform};
use crate::error::{Error, Result};

/// (label, F1 Hz, F2 Hz)
const VOWELS: [(&str, f64, f64); 6] = [
    ("AA", 730.0, 1090.0),
    ("IY", 270.0, 2290.0),
    ("UW", 300.0, 870.0),
    ("EH", 530.0, 1840.0),
    ("AO", 570.0, 840.0),
    ("AE", 660.0, 1720.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub id: String,
    pub f0: f64,
    pub formant_scale: f64,
    pub tilt: f64,
}

/// `n` speakers with well-separated voice parameters.
pub fn toy_speakers(n: usize, seed: u64) -> Vec<ToySpeaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            ToySpeaker {
                id: format!("SPK{}", i + 1),
                f0: 95.0 + 130.0 * frac + rng.random_range(-5.0..5.0),
                formant_scale: 0.85 + 0.35 * frac,
                tilt: 0.6 + 0.8 * ((i * 7 % n.max(1)) as f64 / n.max(1) as f64),
            }
        })
        .collect()
}

fn resonance(freq: f64, centre: f64, bandwidth: f64) -> f64 {
    1.0 / (1.0 + ((freq - centre) / bandwidth).powi(2))
}

/// Renders one utterance and returns it with its label transcript.
pub fn synthesize_utterance(speaker: &ToySpeaker, seed: u64, duration_secs: f64, sample_rate: u32) -> (Waveform, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_secs * sample_rate as f64).round() as usize;
    let rate = sample_rate as f64;

    // segment targets
    let mut segments = Vec::new();
    let mut t = 0usize;
    while t < n {
        let len = (rng.random_range(0.12..0.3) * rate) as usize;
        segments.push((t, rng.random_range(0..VOWELS.len())));
        t += len;
    }
    let transcript = segments.iter().map(|&(_, v)| VOWELS[v].0).collect::<Vec<_>>().join(" ");

    let glide = (0.03 * rate) as usize;
    let vibrato_rate = rng.random_range(3.0..6.0);
    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        while seg + 1 < segments.len() && segments[seg + 1].0 <= i {
            seg += 1;
        }
        let (start, v) = segments[seg];
        let (_, f1, f2) = VOWELS[v];
        let (f1, f2) = if seg > 0 && i - start < glide {
            let (_, p1, p2) = VOWELS[segments[seg - 1].1];
            let w = (i - start) as f64 / glide as f64;
            (p1 + (f1 - p1) * w, p2 + (f2 - p2) * w)
        } else {
            (f1, f2)
        };
        let (f1, f2) = (f1 * speaker.formant_scale, f2 * speaker.formant_scale);
        let time = i as f64 / rate;
        let f0 = speaker.f0 * (1.0 + 0.04 * (TAU * vibrato_rate * time).sin() + 0.08 * (TAU * 0.7 * time).sin());
        phase += TAU * f0 / rate;
        let mut value = 0.0;
        let mut k = 1.0;
        while k * f0 < 0.49 * rate {
            let f = k * f0;
            let amp = (resonance(f, f1, 90.0) + 0.7 * resonance(f, f2, 120.0) + 0.05) / k.powf(speaker.tilt * 0.5);
            value += amp * (k * phase).sin();
            k += 1.0;
        }
        // amplitude envelope: fade in/out and per-segment level
        let env = (i as f64 / (0.02 * rate)).min(1.0) * ((n - i) as f64 / (0.02 * rate)).min(1.0);
        samples.push(value * env * 0.12 + rng.random_range(-1e-6..1e-6));
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 1.0 };
    let wave = Waveform::new(samples.into_iter().map(|s| (s * scale) as f32).collect(), sample_rate).expect("positive rate");
    (wave, transcript)
}

/// Writes `utts_per_speaker` utterances per speaker under `dir/wav/` and a
/// `dir/<name>.jsonl` manifest with absolute paths.
pub fn write_corpus(
    dir: &Path,
    name: &str,
    speakers: &[ToySpeaker],
    utts_per_speaker: usize,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
    role: ManifestRole,
) -> Result<(PathBuf, DatasetManifest)> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::new();
    for (s, speaker) in speakers.iter().enumerate() {
        for u in 0..utts_per_speaker {
            let utt_id = format!("{name}_{}_{:03}", speaker.id, u + 1);
            let utt_seed = seed.wrapping_mul(1_000_003).wrapping_add((s * 10_007 + u) as u64);
            let (wave, transcript) = synthesize_utterance(speaker, utt_seed, duration_secs, sample_rate);
            let wav_path = wav_dir.join(format!("{utt_id}.wav"));
            write_wav(&wave, &wav_path)?;
            records.push(UtteranceRecord {
                utt_id,
                speaker_id: speaker.id.clone(),
                wav_path,
                transcript: Some(transcript),
                language: "en".into(),
            });
        }
    }
    let manifest = DatasetManifest::new(records, role)?;
    let path = dir.join(format!("{name}.jsonl"));
    std::fs::write(&path, manifest.to_jsonl()).map_err(|e| Error::io(&path, e))?;
    Ok((path, manifest))
}
