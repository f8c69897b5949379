//! End-to-end conversion (`Y = Synth(Recog(X)[, s])`), speaker-embedding
//! averaging, vocoders and the external speaker-encoder adapter.

use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::Array1;

use crate::domain::{
    decode_features, encode_features, read_features, resample, write_features, AudioConfig, FeatureSequence,
    MelSpectrogram, SpeakerEmbedding, Waveform,
};
use crate::dsp::MelAnalyzer;
use crate::error::{Error, Result};
use crate::recognizer::{recognize, resample_features, RecognizerInput, UpstreamSpec};
use crate::synthesizer::{forward_free_running, Checkpoint};

/// Converts one source utterance to a denormalized log-mel spectrogram at
/// the working frame rate. `s` must be given iff the model is speaker-conditioned.
pub fn convert(
    source: RecognizerInput<'_>,
    checkpoint: &Checkpoint,
    spec: &UpstreamSpec,
    s: Option<&SpeakerEmbedding>,
    audio: &AudioConfig,
    dropout_seed: u64,
) -> Result<MelSpectrogram> {
    let cfg = checkpoint.params.config();
    if cfg.input_dim != spec.feature_dim {
        return Err(Error::DimMismatch { expected: cfg.input_dim, found: spec.feature_dim });
    }
    match (cfg.speaker_conditioned, s) {
        (true, None) => return Err(Error::MissingEmbedding),
        (false, Some(_)) => return Err(Error::ExtraEmbedding),
        _ => {}
    }
    let content = recognize(source, spec, audio)?;
    let content = resample_features(&content, audio.frame_shift_ms())?;
    let normalized = forward_free_running(&checkpoint.params, &content, s, dropout_seed)?;
    denormalize_mel(checkpoint, &normalized, audio)
}

/// Maps a model-space prediction back to log-mel using the checkpoint's
/// target statistics, clamping at the log floor.
pub fn denormalize_mel(checkpoint: &Checkpoint, normalized: &MelSpectrogram, audio: &AudioConfig) -> Result<MelSpectrogram> {
    let frames = checkpoint.target_stats.denormalize(&normalized.frames().mapv(|v| v as f64));
    MelSpectrogram::floored(frames.mapv(|v| v as f32), normalized.frame_shift_ms(), audio.log_floor)
}

/// Elementwise mean re-normalized to unit length.
pub fn average_embedding(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let first = embeddings.first().ok_or(Error::EmptyEmbeddings)?;
    let mut sum = Array1::<f64>::zeros(first.dim());
    for e in embeddings {
        if e.dim() != first.dim() {
            return Err(Error::DimMismatch { expected: first.dim(), found: e.dim() });
        }
        sum += e.vector();
    }
    let mean = sum / embeddings.len() as f64;
    if mean.dot(&mean).sqrt() < 1e-9 {
        return Err(Error::ZeroMeanEmbedding);
    }
    SpeakerEmbedding::new(mean)
}

/// Griffin-Lim vocoder: pseudo-inverse mel filterbank, fixed-seed initial
/// phase, output trimmed to `T * hop` samples and scaled down if it clips.
pub fn vocode_native(mel: &MelSpectrogram, audio: &AudioConfig) -> Result<Waveform> {
    let analyzer = MelAnalyzer::new(audio)?;
    vocode_native_with(&analyzer, mel)
}

pub fn vocode_native_with(analyzer: &MelAnalyzer, mel: &MelSpectrogram) -> Result<Waveform> {
    if mel.frames().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mel-spectrogram"));
    }
    let audio = analyzer.config();
    let magnitude = analyzer.mel_to_magnitude(&mel.frames().mapv(|v| v as f64));
    let mut samples = analyzer.griffin_lim(&magnitude, audio.griffin_lim_iters, 0)?;
    samples.resize(mel.num_frames() * audio.hop_length, 0.0);
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Waveform::new(samples.into_iter().map(|s| s as f32).collect(), audio.sample_rate)
}

fn split_command(command: &str) -> Result<(String, Vec<String>)> {
    let mut parts = command.split_whitespace().map(str::to_string);
    let program = parts
        .next()
        .ok_or_else(|| Error::InvalidInput("empty adapter command".into()))?;
    Ok((program, parts.collect()))
}

/// Runs `command <args...>`; a non-zero exit becomes an error carrying stderr.
pub(crate) fn run_adapter(command: &str, args: &[&Path]) -> Result<std::process::Output> {
    let (program, mut fixed) = split_command(command)?;
    fixed.extend(args.iter().map(|p| p.display().to_string()));
    let output = Command::new(&program).args(&fixed).output().map_err(|e| Error::AdapterExit {
        command: command.to_string(),
        status: "spawn failure".into(),
        stderr: e.to_string(),
    })?;
    if !output.status.success() {
        return Err(Error::AdapterExit {
            command: command.to_string(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    Ok(output)
}

/// External vocoder: invoked as `command <mel.s3vc> <out.wav>`. The RIFF
/// output is returned as-is apart from conversion to float samples and
/// resampling to the working rate.
pub fn vocode_external(mel: &MelSpectrogram, command: &str, audio: &AudioConfig) -> Result<Waveform> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("mel.s3vc");
    let output = dir.path().join("out.wav");
    write_features(&mel.to_features("mel"), &input)?;
    run_adapter(command, &[&input, &output])?;
    let wave = crate::domain::read_wav(&output, None).map_err(|e| Error::AdapterOutput {
        command: command.to_string(),
        message: e.to_string(),
    })?;
    if wave.is_empty() {
        return Err(Error::AdapterOutput { command: command.to_string(), message: "empty waveform".into() });
    }
    Ok(resample(&wave, audio.sample_rate))
}

/// Produces an utterance-level speaker embedding from audio.
pub trait SpeakerEncoder: Sync {
    /// `key` identifies the audio for caching (normally the utt_id).
    fn embed(&self, key: &str, wav_path: &Path) -> Result<SpeakerEmbedding>;

    fn dim(&self) -> usize;
}

/// Speaker encoder backed by an external command and/or a cache directory.
///
/// The command is invoked as `command <input.wav> <output.s3vc>` and must
/// write a `1 x E` S3VC file. Results are cached as `<cache_dir>/<key>.s3vc`
/// via write-then-rename; a cache hit never spawns a process.
#[derive(Debug, Clone)]
pub struct ExternalSpeakerEncoder {
    pub command: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub dim: usize,
}

impl ExternalSpeakerEncoder {
    fn validate(&self, seq: &FeatureSequence) -> Result<SpeakerEmbedding> {
        if seq.num_frames() != 1 || seq.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: seq.frames().len() });
        }
        SpeakerEmbedding::new(seq.frames().row(0).mapv(|v| v as f64))
    }

    pub fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.s3vc")))
    }
}

impl SpeakerEncoder for ExternalSpeakerEncoder {
    fn embed(&self, key: &str, wav_path: &Path) -> Result<SpeakerEmbedding> {
        if let Some(path) = self.cache_path(key).filter(|p| p.is_file()) {
            return self.validate(&read_features(&path)?);
        }
        let command = self.command.as_deref().ok_or_else(|| {
            Error::InvalidInput(format!("no cached embedding for `{key}` and no speaker-encoder command"))
        })?;
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let out = work.path().join("embedding.s3vc");
        run_adapter(command, &[wav_path, &out])?;
        let bytes = std::fs::read(&out).map_err(|e| Error::AdapterOutput {
            command: command.to_string(),
            message: e.to_string(),
        })?;
        let seq = decode_features(&bytes, key).map_err(|e| Error::AdapterOutput {
            command: command.to_string(),
            message: e.to_string(),
        })?;
        let embedding = self.validate(&seq)?;
        if let Some(path) = self.cache_path(key) {
            let dir = path.parent().expect("cache file has a parent");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
            std::io::Write::write_all(&mut tmp, &encode_features(&seq)).map_err(|e| Error::io(&path, e))?;
            tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        }
        Ok(embedding)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Reads a `1 x E` (or `N x E`, averaged) embedding file.
pub fn read_embedding(path: impl AsRef<Path>) -> Result<SpeakerEmbedding> {
    let seq = read_features(path)?;
    let rows: Vec<SpeakerEmbedding> = seq
        .frames()
        .rows()
        .into_iter()
        .map(|r| SpeakerEmbedding::new(r.mapv(|v| v as f64)))
        .collect::<Result<_>>()?;
    average_embedding(&rows)
}

pub fn write_embedding(e: &SpeakerEmbedding, path: impl AsRef<Path>) -> Result<()> {
    let frames = e.vector().mapv(|v| v as f32).insert_axis(ndarray::Axis(0));
    write_features(&FeatureSequence::new(frames, 1.0, "embedding")?, path)
}
