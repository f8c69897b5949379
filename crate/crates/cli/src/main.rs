use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use recsyn_core::converter::{
    average_embedding, convert, read_embedding, vocode_external, vocode_native_with, ExternalSpeakerEncoder,
    SpeakerEncoder,
};
use recsyn_core::domain::{load_config, load_manifest, write_features, write_wav, AppConfig, ManifestRole};
use recsyn_core::dsp::MelAnalyzer;
use recsyn_core::evaluator::{
    build_trials, correlation_matrix, evaluate_system, metrics_tsv, parse_metrics_table, published_table3,
    subset_search, EvalItem, ExternalTranscriber, Transcriber, DEFAULT_ASV_THRESHOLD, METRIC_LABELS,
};
use recsyn_core::recognizer::{extract_mel, RecognizerInput, UpstreamSpec};
use recsyn_core::synthesizer::load_checkpoint;
use recsyn_core::toy::{toy_speakers, write_corpus};
use recsyn_core::trainer::{embed_manifest, train_a2a, train_a2o, TrainOutput};

#[derive(Parser)]
#[command(name = "recsyn", version, about = "Recognition-synthesis voice conversion")]
struct Cli {
    /// TOML configuration file (audio, model, training, evaluation sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed and the generation dropout seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel features for every utterance of a manifest.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a decoder.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        upstream: UpstreamArgs,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Convert every utterance of a source manifest.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Directory of target-speaker embedding files (S3VC), averaged into one.
        #[arg(long)]
        target_embeddings: Option<PathBuf>,
        /// `native` (Griffin-Lim) or `external:<command>`.
        #[arg(long, default_value = "native")]
        vocoder: String,
        #[command(flatten)]
        upstream: UpstreamArgs,
    },
    /// Score converted audio against a reference manifest.
    Evaluate {
        /// Directory holding `<utt_id>.wav` conversions.
        #[arg(long)]
        converted: PathBuf,
        /// Reference manifest (target-speaker recordings with transcripts).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "system")]
        system: String,
        /// Skip MCD; report WER and ASV only.
        #[arg(long)]
        non_intrusive: bool,
        /// ASR command: `<command> <input.wav>` prints the transcript.
        #[arg(long)]
        asr: Option<String>,
        #[command(flatten)]
        encoder: EncoderArgs,
        /// Multi-speaker manifest used to calibrate the ASV threshold at the equal-error rate.
        #[arg(long)]
        calibration_manifest: Option<PathBuf>,
    },
    /// Pairwise correlation between metric columns.
    Correlate {
        /// Tab-separated table: system, mcd, wer, asv, naturalness, similarity.
        #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
        table: Option<PathBuf>,
        /// Use the bundled published results and search for the matching row set.
        #[arg(long)]
        bundled: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic vowel corpus and its manifest.
    ToyCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        speakers: usize,
        #[arg(long, default_value_t = 20)]
        utterances: usize,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value = "toy")]
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    A2o,
    A2a,
}

#[derive(Args)]
struct UpstreamArgs {
    /// `mel`, or the name of an external upstream whose features live in --feature-dir.
    #[arg(long, default_value = "mel")]
    upstream: String,
    #[arg(long)]
    feature_dir: Option<PathBuf>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    frame_shift_ms: Option<f32>,
}

impl UpstreamArgs {
    fn spec(&self, config: &AppConfig) -> Result<UpstreamSpec> {
        if self.upstream == "mel" {
            return Ok(UpstreamSpec::mel(&config.audio));
        }
        let (Some(dir), Some(dim), Some(shift)) = (&self.feature_dir, self.feature_dim, self.frame_shift_ms) else {
            bail!("external upstream `{}` needs --feature-dir, --feature-dim and --frame-shift-ms", self.upstream);
        };
        let spec = UpstreamSpec::external(&self.upstream, dim, shift, dir);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct EncoderArgs {
    /// Speaker encoder: `<command> <input.wav> <output.s3vc>` writes a 1 x E embedding.
    #[arg(long)]
    speaker_encoder: Option<String>,
    /// Embedding cache directory (`<utt_id>.s3vc`).
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
}

impl EncoderArgs {
    fn encoder(&self, config: &AppConfig) -> Option<ExternalSpeakerEncoder> {
        (self.speaker_encoder.is_some() || self.embedding_cache.is_some()).then(|| ExternalSpeakerEncoder {
            command: self.speaker_encoder.clone(),
            cache_dir: self.embedding_cache.clone(),
            dim: self.embedding_dim.unwrap_or(config.model.embedding_dim),
        })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reports every failed utterance and turns a non-empty list into an error.
fn report_failures(what: &str, failures: Vec<(String, String)>) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for (utt, err) in &failures {
        tracing::error!(utt_id = %utt, "{err}");
    }
    let ids: Vec<&str> = failures.iter().map(|(u, _)| u.as_str()).collect();
    bail!("{what} failed for {} utterance(s): {}", failures.len(), ids.join(", "))
}

fn extract(config: &AppConfig, manifest: &Path, out_dir: &Path, force: bool) -> Result<()> {
    let manifest = load_manifest(manifest, ManifestRole::SourceEval)?;
    ensure_dir(out_dir)?;
    let results: Vec<(String, Result<bool>)> = manifest
        .records()
        .par_iter()
        .map(|r| {
            let path = out_dir.join(format!("{}.s3vc", r.utt_id));
            let run = || -> Result<bool> {
                if path.is_file() && !force {
                    return Ok(false);
                }
                let wave = recsyn_core::domain::read_wav(&r.wav_path, Some(config.audio.sample_rate))?;
                let features = extract_mel(&wave, &config.audio)?.to_features(&r.utt_id);
                write_features(&features, &path)?;
                Ok(true)
            };
            (r.utt_id.clone(), run())
        })
        .collect();
    let mut index = String::from("utt_id\tpath\n");
    let (mut written, mut skipped, mut failures) = (0, 0, Vec::new());
    for (utt, res) in results {
        match res {
            Ok(w) => {
                if w {
                    written += 1;
                } else {
                    skipped += 1;
                }
                index.push_str(&format!("{utt}\t{}\n", out_dir.join(format!("{utt}.s3vc")).display()));
            }
            Err(e) => failures.push((utt, format!("{e:#}"))),
        }
    }
    write_text(&out_dir.join("index.tsv"), &index)?;
    tracing::info!(written, skipped, "feature extraction finished");
    report_failures("feature extraction", failures)
}

fn train(config: &AppConfig, manifest: &Path, mode: Mode, out_dir: &Path, spec: &UpstreamSpec, encoder: &EncoderArgs, force: bool) -> Result<()> {
    let output = TrainOutput::in_dir(out_dir);
    if let Some(path) = output.final_path().filter(|p| p.exists() && !force) {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    let outcome = match mode {
        Mode::A2o => train_a2o(&load_manifest(manifest, ManifestRole::TargetSpeaker)?, spec, config, &output)?,
        Mode::A2a => {
            let manifest = load_manifest(manifest, ManifestRole::MultiSpeaker)?;
            let Some(encoder) = encoder.encoder(config) else {
                bail!("a2a training needs --speaker-encoder or --embedding-cache");
            };
            train_a2a(&manifest, spec, &encoder, config, &output)?
        }
    };
    tracing::info!(
        initial_loss = outcome.initial_loss,
        final_loss = outcome.final_loss,
        checkpoint = %output.final_path().expect("directory output").display(),
        "training finished"
    );
    Ok(())
}

fn target_embedding(dir: &Path) -> Result<recsyn_core::SpeakerEmbedding> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "s3vc"))
        .collect();
    files.sort();
    let embeddings = files.iter().map(read_embedding).collect::<recsyn_core::Result<Vec<_>>>()?;
    Ok(average_embedding(&embeddings)?)
}

#[allow(clippy::too_many_arguments)]
fn convert_cmd(
    config: &AppConfig,
    checkpoint: &Path,
    manifest: &Path,
    out_dir: &Path,
    target_embeddings: Option<&Path>,
    vocoder: &str,
    spec: &UpstreamSpec,
    force: bool,
) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest, ManifestRole::SourceEval)?;
    let conditioned = checkpoint.params.config().speaker_conditioned;
    let s = match (conditioned, target_embeddings) {
        (true, None) => bail!("checkpoint is speaker-conditioned; pass --target-embeddings"),
        (false, Some(_)) => bail!("checkpoint is any-to-one; --target-embeddings is not accepted"),
        (true, Some(dir)) => Some(target_embedding(dir)?),
        (false, None) => None,
    };
    let external = match vocoder {
        "native" => None,
        v => match v.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Some(cmd.to_string()),
            _ => bail!("--vocoder must be `native` or `external:<command>`"),
        },
    };
    ensure_dir(out_dir)?;
    let analyzer = MelAnalyzer::new(&config.audio)?;
    let failures: Vec<(String, String)> = manifest
        .records()
        .par_iter()
        .filter_map(|r| {
            let wav_path = out_dir.join(format!("{}.wav", r.utt_id));
            let mel_path = out_dir.join(format!("{}.mel.s3vc", r.utt_id));
            if wav_path.is_file() && mel_path.is_file() && !force {
                return None;
            }
            let run = || -> Result<()> {
                let mel = convert(
                    RecognizerInput::Record(r),
                    &checkpoint,
                    spec,
                    s.as_ref(),
                    &config.audio,
                    config.evaluation.dropout_seed,
                )?;
                write_features(&mel.to_features(&r.utt_id), &mel_path)?;
                let wave = match &external {
                    Some(cmd) => vocode_external(&mel, cmd, &config.audio)?,
                    None => vocode_native_with(&analyzer, &mel)?,
                };
                write_wav(&wave, &wav_path)?;
                Ok(())
            };
            run().err().map(|e| (r.utt_id.clone(), format!("{e:#}")))
        })
        .collect();
    tracing::info!(utterances = manifest.len(), failed = failures.len(), "conversion finished");
    report_failures("conversion", failures)
}

struct EvaluateArgs<'a> {
    converted: &'a Path,
    manifest: &'a Path,
    out_dir: &'a Path,
    system: &'a str,
    non_intrusive: bool,
    asr: Option<&'a str>,
    encoder: &'a EncoderArgs,
    calibration: Option<&'a Path>,
}

fn evaluate(config: &AppConfig, args: EvaluateArgs<'_>) -> Result<()> {
    let manifest = load_manifest(args.manifest, ManifestRole::SourceEval)?;
    let mut items = Vec::new();
    for r in manifest.records() {
        let converted_wav = args.converted.join(format!("{}.wav", r.utt_id));
        if !converted_wav.is_file() {
            tracing::warn!(utt_id = %r.utt_id, "no converted audio; skipped");
            continue;
        }
        let reference_wav = if args.non_intrusive {
            None
        } else if r.wav_path.is_file() {
            Some(r.wav_path.clone())
        } else {
            tracing::warn!(utt_id = %r.utt_id, "reference audio missing; skipped for MCD");
            None
        };
        items.push(EvalItem { utt_id: r.utt_id.clone(), converted_wav, reference_wav, transcript: r.transcript.clone() });
    }
    if items.is_empty() {
        bail!("no converted utterances found in {}", args.converted.display());
    }
    let transcriber = args.asr.map(|c| ExternalTranscriber { command: c.to_string() });
    let encoder = args.encoder.encoder(config);
    let asv_setup = match &encoder {
        Some(enc) => {
            let present: Vec<_> = manifest.records().iter().filter(|r| r.wav_path.is_file()).cloned().collect();
            let refs = recsyn_core::DatasetManifest::new(present, ManifestRole::SourceEval)?;
            let target = average_embedding(&embed_manifest(&refs, enc)?)?;
            let threshold = asv_threshold(config, enc, args.calibration)?;
            Some((target, threshold))
        }
        None => None,
    };
    let scores = evaluate_system(
        args.system,
        &items,
        &config.audio,
        config.evaluation.mcd_order,
        transcriber.as_ref().map(|t| t as &dyn Transcriber),
        match (&encoder, &asv_setup) {
            (Some(enc), Some((target, threshold))) => Some((enc as &dyn SpeakerEncoder, target, *threshold)),
            _ => None,
        },
    )?;
    ensure_dir(args.out_dir)?;
    write_text(&args.out_dir.join("metrics.tsv"), &metrics_tsv(std::slice::from_ref(&scores.row)))?;
    write_text(&args.out_dir.join("metrics.json"), &serde_json::to_string_pretty(&scores)?)?;
    tracing::info!(system = %scores.row.system, mcd = ?scores.row.mcd, wer = ?scores.row.wer, asv = ?scores.row.asv, "evaluation finished");
    Ok(())
}

fn asv_threshold(config: &AppConfig, encoder: &ExternalSpeakerEncoder, calibration: Option<&Path>) -> Result<f64> {
    if let Some(t) = config.evaluation.asv_threshold {
        return Ok(t);
    }
    if let Some(path) = calibration {
        let manifest = load_manifest(path, ManifestRole::MultiSpeaker)?;
        let embeddings = embed_manifest(&manifest, encoder)?;
        let labelled: Vec<_> = manifest.records().iter().map(|r| r.speaker_id.clone()).zip(embeddings).collect();
        let (genuine, impostor) = build_trials(&labelled)?;
        let cal = recsyn_core::evaluator::eer_threshold(&genuine, &impostor)?;
        tracing::info!(threshold = cal.threshold, eer = cal.eer, "ASV threshold calibrated");
        return Ok(cal.threshold);
    }
    tracing::warn!(threshold = DEFAULT_ASV_THRESHOLD, "no ASV threshold configured or calibrated; using default");
    Ok(DEFAULT_ASV_THRESHOLD)
}

fn correlate(table: Option<&Path>, bundled: bool, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let published = published_table3();
    let (matrix, rows_note) = if bundled {
        let search = subset_search()?;
        for r in &search {
            tracing::info!(rows = %r.label, n = r.systems.len(), max_abs_error = r.max_abs_error, "candidate row set");
        }
        let best = search.into_iter().next().expect("non-empty search");
        write_text(&out_dir.join("subset.json"), &serde_json::to_string_pretty(&best)?)?;
        (best.matrix, Some(best.label))
    } else {
        let path = table.expect("clap enforces --table or --bundled");
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        (correlation_matrix(&parse_metrics_table(&text)?)?, None)
    };
    let mut tsv = String::from("metric_a\tmetric_b\tcoefficient\tpublished\tdifference\n");
    for i in 0..5 {
        for j in i + 1..5 {
            let (c, p) = (matrix.values[i][j], published.values[i][j]);
            tsv.push_str(&format!("{}\t{}\t{c:.3}\t{p:.3}\t{:+.3}\n", METRIC_LABELS[i], METRIC_LABELS[j], c - p));
        }
    }
    write_text(&out_dir.join("correlation.tsv"), &tsv)?;
    write_text(&out_dir.join("correlation.json"), &serde_json::to_string_pretty(&matrix)?)?;
    tracing::info!(rows = ?rows_note, max_abs_diff = matrix.max_abs_diff(&published), "correlation written");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
        config.evaluation.dropout_seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Extract { manifest, out_dir } => extract(&config, manifest, out_dir, cli.force),
        Command::Train { manifest, mode, out_dir, upstream, encoder } => {
            train(&config, manifest, *mode, out_dir, &upstream.spec(&config)?, encoder, cli.force)
        }
        Command::Convert { checkpoint, manifest, out_dir, target_embeddings, vocoder, upstream } => convert_cmd(
            &config,
            checkpoint,
            manifest,
            out_dir,
            target_embeddings.as_deref(),
            vocoder,
            &upstream.spec(&config)?,
            cli.force,
        ),
        Command::Evaluate { converted, manifest, out_dir, system, non_intrusive, asr, encoder, calibration_manifest } => {
            evaluate(
                &config,
                EvaluateArgs {
                    converted,
                    manifest,
                    out_dir,
                    system,
                    non_intrusive: *non_intrusive,
                    asr: asr.as_deref(),
                    encoder,
                    calibration: calibration_manifest.as_deref(),
                },
            )
        }
        Command::Correlate { table, bundled, out_dir } => correlate(table.as_deref(), *bundled, out_dir),
        Command::ToyCorpus { out_dir, speakers, utterances, duration, name } => {
            let role = if *speakers > 1 { ManifestRole::MultiSpeaker } else { ManifestRole::TargetSpeaker };
            let speakers = toy_speakers(*speakers, config.training.seed);
            let (path, manifest) =
                write_corpus(out_dir, name, &speakers, *utterances, *duration, config.audio.sample_rate, config.training.seed, role)?;
            tracing::info!(manifest = %path.display(), utterances = manifest.len(), "toy corpus written");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
