//! A2O and A2A synthesizer training: masked L1 loss, Adam with global-norm
//! clipping, seeded shuffling and periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::converter::SpeakerEncoder;
use crate::domain::{
    read_wav, AppConfig, AudioConfig, DatasetManifest, DecoderType, ManifestRole, SpeakerEmbedding, TrainingConfig,
};
use crate::dsp::MelAnalyzer;
use crate::error::{Error, Result};
use crate::recognizer::{extract_mel_with, recognize, resample_features, RecognizerInput, UpstreamSpec};
use crate::synthesizer::{
    build_decoder, loss_and_gradients, save_checkpoint, teacher_forced_loss, Checkpoint, DecoderConfig,
    FeatureStats, ModelParameters, TrainingBatch,
};

/// Masked mean absolute error over the frames where `valid[t]` is true.
pub fn compute_loss(pred: &Array2<f64>, target: &Array2<f64>, valid: &[bool]) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::DimMismatch { expected: target.len(), found: pred.len() });
    }
    if valid.len() != pred.nrows() {
        return Err(Error::LengthMismatch { left: pred.nrows(), right: valid.len() });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, keep) in valid.iter().enumerate() {
        if *keep {
            total += Zip::from(pred.row(t)).and(target.row(t)).fold(0.0, |a, p, q| a + (p - q).abs());
            count += pred.ncols();
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("unmasked frames"));
    }
    Ok(total / count as f64)
}

/// Loss of a model with an optional postnet: pre-postnet plus post-postnet L1.
pub fn compute_total_loss(pre: &Array2<f64>, post: Option<&Array2<f64>>, target: &Array2<f64>, valid: &[bool]) -> Result<f64> {
    let mut loss = compute_loss(pre, target, valid)?;
    if let Some(post) = post {
        loss += compute_loss(post, target, valid)?;
    }
    Ok(loss)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParameters, training: &TrainingConfig) -> Self {
        let zeros: Vec<_> = params.tensors().iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
        Self {
            lr: training.learning_rate,
            beta1: training.adam_beta1,
            beta2: training.adam_beta2,
            eps: training.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, params: &mut ModelParameters, grads: &[Array2<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((_, w), g), (m, v)) in params.tensors_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * scale));
    }
    norm
}

fn mix_seed(seed: u64, step: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One prepared training utterance.
#[derive(Debug, Clone)]
pub struct Example {
    pub utt_id: String,
    pub speaker_id: String,
    /// Content frames resampled to the mel frame rate.
    pub content: Array2<f64>,
    /// Raw log-mel target of the same length.
    pub target: Array2<f64>,
}

/// Loads audio and content features for every record, failing fast with the
/// full list of utterances whose audio or external features are missing.
pub fn prepare_examples(manifest: &DatasetManifest, spec: &UpstreamSpec, audio: &AudioConfig) -> Result<Vec<Example>> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    spec.validate()?;
    let mut missing = manifest.missing_audio();
    if !spec.native {
        for r in manifest.records() {
            if spec.feature_path(&r.utt_id).is_none_or(|p| !p.is_file()) && !missing.contains(&r.utt_id) {
                missing.push(r.utt_id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::FeaturesMissing(missing));
    }
    let analyzer = MelAnalyzer::new(audio)?;
    let shift = audio.frame_shift_ms();
    manifest
        .records()
        .par_iter()
        .map(|r| {
            let wave = read_wav(&r.wav_path, Some(audio.sample_rate))?;
            let mel = extract_mel_with(&analyzer, &wave)?;
            let content = if spec.native {
                mel.to_features(&r.utt_id)
            } else {
                resample_features(&recognize(RecognizerInput::Record(r), spec, audio)?, shift)?
            };
            let t = content.num_frames().min(mel.num_frames());
            Ok(Example {
                utt_id: r.utt_id.clone(),
                speaker_id: r.speaker_id.clone(),
                content: content.frames().slice(s![..t, ..]).mapv(|v| v as f64),
                target: mel.frames().slice(s![..t, ..]).mapv(|v| v as f64),
            })
        })
        .collect()
}

/// Where a run writes its log and checkpoints. With no directory nothing is
/// written to disk.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

impl TrainOutput {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn checkpoint_path(&self, step: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("checkpoint_{step:07}.s3ck")))
    }

    pub fn final_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("model.s3ck"))
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("train.log"))
    }
}

/// State of one training run. Owns its parameters and optimizer exclusively.
pub struct TrainRun {
    params: ModelParameters,
    target_stats: FeatureStats,
    optimizer: Adam,
    training: TrainingConfig,
    content: Vec<Array2<f64>>,
    targets: Vec<Array2<f64>>,
    embeddings: Option<Vec<SpeakerEmbedding>>,
    step: u64,
    losses: Vec<f64>,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: ChaCha8Rng,
}

impl TrainRun {
    fn new(
        decoder: DecoderConfig,
        training: &TrainingConfig,
        examples: &[Example],
        target_stats: FeatureStats,
        embeddings: Option<Vec<SpeakerEmbedding>>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut params = build_decoder(&decoder, training.seed)?;
        params.set_input_stats(FeatureStats::from_frames(examples.iter().map(|e| &e.content))?)?;
        let targets = examples.iter().map(|e| target_stats.normalize(&e.target)).collect();
        let optimizer = Adam::new(&params, training);
        Ok(Self {
            params,
            target_stats,
            optimizer,
            training: training.clone(),
            content: examples.iter().map(|e| e.content.clone()).collect(),
            targets,
            embeddings,
            step: 0,
            losses: Vec::new(),
            order: Vec::new(),
            cursor: 0,
            shuffle_rng: ChaCha8Rng::seed_from_u64(mix_seed(training.seed, u64::MAX)),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn num_examples(&self) -> usize {
        self.content.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), target_stats: self.target_stats.clone(), step: self.step }
    }

    /// Batch over the given example indices.
    pub fn batch(&self, indices: &[usize]) -> TrainingBatch {
        TrainingBatch {
            content: indices.iter().map(|&i| self.content[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            embeddings: self.embeddings.as_ref().map(|e| indices.iter().map(|&i| e[i].clone()).collect()),
        }
    }

    /// Teacher-forced loss over the given examples under a fixed dropout seed.
    pub fn loss_on(&self, indices: &[usize], dropout_seed: u64) -> Result<f64> {
        teacher_forced_loss(&self.params, &self.batch(indices), dropout_seed)
    }

    /// Teacher-forced loss over the whole training set.
    pub fn training_set_loss(&self, dropout_seed: u64) -> Result<f64> {
        let all: Vec<usize> = (0..self.num_examples()).collect();
        self.loss_on(&all, dropout_seed)
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let size = self.training.batch_size.min(self.num_examples()).max(1);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order = (0..self.num_examples()).collect();
                self.order.shuffle(&mut self.shuffle_rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer update on an explicit batch; returns the pre-update loss.
    pub fn step_on(&mut self, indices: &[usize], dropout_seed: u64) -> Result<f64> {
        let (loss, mut grads) = loss_and_gradients(&self.params, &self.batch(indices), dropout_seed)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        clip_global_norm(&mut grads, self.training.grad_clip);
        self.optimizer.apply(&mut self.params, &grads);
        self.step += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    /// One update on the next shuffled batch.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let seed = mix_seed(self.training.seed, self.step + 1);
        self.step_on(&batch, seed)
    }

    /// Runs until `training.steps`, logging and checkpointing into `output`.
    pub fn run(&mut self, output: &TrainOutput) -> Result<()> {
        let mut log = match output.log_path() {
            Some(path) => {
                let dir = output.dir.as_deref().expect("log path implies a directory");
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                writeln!(w, "step\tloss\twall_time").map_err(|e| Error::io(&path, e))?;
                Some((w, path))
            }
            None => None,
        };
        let start = Instant::now();
        let total = self.training.steps as u64;
        while self.step < total {
            let loss = self.train_step()?;
            let step = self.step;
            let elapsed = start.elapsed().as_secs_f64();
            if step == 1 || step % self.training.log_interval.max(1) as u64 == 0 || step == total {
                tracing::info!(step, loss, elapsed, "train");
                if let Some((w, path)) = log.as_mut() {
                    writeln!(w, "{step}\t{loss:.6}\t{elapsed:.3}").map_err(|e| Error::io(path.as_path(), e))?;
                    w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                }
            }
            let interval = self.training.checkpoint_interval as u64;
            if interval > 0 && step % interval == 0 {
                if let Some(path) = output.checkpoint_path(step) {
                    save_checkpoint(&self.checkpoint(), &path)?;
                }
            }
        }
        if let Some(path) = output.final_path() {
            save_checkpoint(&self.checkpoint(), &path)?;
        }
        Ok(())
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Per-step minibatch losses.
    pub losses: Vec<f64>,
    /// Teacher-forced training-set loss before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn finish(mut run: TrainRun, output: &TrainOutput) -> Result<TrainOutcome> {
    let eval_seed = mix_seed(run.training.seed, 0);
    let initial_loss = run.training_set_loss(eval_seed)?;
    run.run(output)?;
    let final_loss = run.training_set_loss(eval_seed)?;
    if final_loss > initial_loss {
        tracing::warn!(initial_loss, final_loss, "training-set loss did not decrease");
    }
    Ok(TrainOutcome { checkpoint: run.checkpoint(), losses: run.losses, initial_loss, final_loss })
}

fn a2o_decoder(config: &AppConfig, spec: &UpstreamSpec) -> Result<DecoderConfig> {
    if config.model.speaker_conditioned {
        return Err(Error::InvalidConfig("any-to-one models are not speaker-conditioned".into()));
    }
    let decoder = DecoderConfig::from_model_config(&config.model, spec.feature_dim);
    decoder.validate()?;
    Ok(decoder)
}

/// Prepares an any-to-one run: target mels normalized with the speaker's statistics.
pub fn prepare_a2o(manifest: &DatasetManifest, spec: &UpstreamSpec, config: &AppConfig) -> Result<TrainRun> {
    if manifest.role() != ManifestRole::TargetSpeaker {
        return Err(Error::ManifestRole { role: manifest.role().to_string(), message: "any-to-one training needs a target_speaker manifest".into() });
    }
    let decoder = a2o_decoder(config, spec)?;
    let examples = prepare_examples(manifest, spec, &config.audio)?;
    let stats = FeatureStats::from_frames(examples.iter().map(|e| &e.target))?;
    TrainRun::new(decoder, &config.training, &examples, stats, None)
}

pub fn train_a2o(manifest: &DatasetManifest, spec: &UpstreamSpec, config: &AppConfig, output: &TrainOutput) -> Result<TrainOutcome> {
    finish(prepare_a2o(manifest, spec, config)?, output)
}

/// Embeds every record's own waveform, in manifest order.
pub fn embed_manifest(manifest: &DatasetManifest, encoder: &dyn SpeakerEncoder) -> Result<Vec<SpeakerEmbedding>> {
    manifest
        .records()
        .par_iter()
        .map(|r| {
            encoder
                .embed(&r.utt_id, &r.wav_path)
                .map_err(|e| Error::AdapterForUtterance { utt_id: r.utt_id.clone(), source: Box::new(e) })
        })
        .collect()
}

/// Prepares an any-to-any run. The model is a speaker-conditioned `taco2_ar`;
/// each utterance is conditioned on the embedding of its own waveform, and
/// targets use statistics pooled over all speakers.
pub fn prepare_a2a(
    manifest: &DatasetManifest,
    spec: &UpstreamSpec,
    encoder: &dyn SpeakerEncoder,
    config: &AppConfig,
) -> Result<TrainRun> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if manifest.speakers().len() < 2 {
        return Err(Error::SingleSpeakerManifest);
    }
    if config.model.decoder != DecoderType::Taco2Ar {
        return Err(Error::InvalidConfig(format!(
            "any-to-any training needs the taco2_ar decoder, got {}",
            config.model.decoder
        )));
    }
    let mut model = config.model.clone();
    model.speaker_conditioned = true;
    model.embedding_dim = encoder.dim();
    let decoder = DecoderConfig::from_model_config(&model, spec.feature_dim);
    decoder.validate()?;
    let examples = prepare_examples(manifest, spec, &config.audio)?;
    let embeddings = embed_manifest(manifest, encoder)?;
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != encoder.dim()) {
        return Err(Error::DimMismatch { expected: encoder.dim(), found: bad.dim() });
    }
    let stats = FeatureStats::from_frames(examples.iter().map(|e| &e.target))?;
    TrainRun::new(decoder, &config.training, &examples, stats, Some(embeddings))
}

pub fn train_a2a(
    manifest: &DatasetManifest,
    spec: &UpstreamSpec,
    encoder: &dyn SpeakerEncoder,
    config: &AppConfig,
    output: &TrainOutput,
) -> Result<TrainOutcome> {
    finish(prepare_a2a(manifest, spec, encoder, config)?, output)
}

/// Reads a training log written by [`TrainRun::run`] into `(step, loss, wall_time)` rows.
pub fn read_log(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::ManifestParse { line: i + 2, message: format!("bad log line `{line}`") };
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok((
                cols[0].parse().map_err(|_| bad())?,
                cols[1].parse().map_err(|_| bad())?,
                cols[2].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{toy_speakers, write_corpus};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        assert_eq!(compute_loss(&t, &t, &[true; 4]).unwrap(), 0.0);
        assert_eq!(compute_loss(&(&t + 1.0), &t, &[true; 4]).unwrap(), 1.0);
        let mut p = t.clone();
        p.slice_mut(s![..2, ..]).mapv_inplace(|v| v + 1.0);
        assert_eq!(compute_loss(&p, &t, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(compute_total_loss(&(&t + 1.0), Some(&(&t - 2.0)), &t, &[true; 4]).unwrap(), 3.0);
        assert!(matches!(compute_loss(&t, &array![[1.0]], &[true]), Err(Error::DimMismatch { .. })));
        assert!(matches!(compute_loss(&t, &t, &[true]), Err(Error::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_zero_iff_equal_on_valid(
            vals in prop::collection::vec(-5.0f64..5.0, 12),
            delta in prop::collection::vec(-1.0f64..1.0, 12),
            valid in prop::collection::vec(any::<bool>(), 4),
        ) {
            prop_assume!(valid.iter().any(|v| *v));
            let t = Array2::from_shape_vec((4, 3), vals).unwrap();
            let d = Array2::from_shape_vec((4, 3), delta).unwrap();
            let p = &t + &d;
            let loss = compute_loss(&p, &t, &valid).unwrap();
            prop_assert!(loss >= 0.0);
            let differs = valid.iter().enumerate().any(|(r, v)| *v && d.row(r).iter().any(|x| *x != 0.0));
            prop_assert_eq!(loss == 0.0, !differs);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![array![[3.0, 0.0]], array![[0.0, 4.0]]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n: f64 = g.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    fn small_config(decoder: DecoderType) -> AppConfig {
        let mut c = AppConfig::default();
        c.model.decoder = decoder;
        c.model.hidden_dim = 16;
        c.model.lstmp_proj_dim = 16;
        c.model.prenet_dims = vec![16, 16];
        c.model.postnet_channels = 16;
        c.model.postnet_layers = 3;
        c.training.batch_size = 2;
        c.training.steps = 3;
        c.training.checkpoint_interval = 2;
        c.training.log_interval = 1;
        c
    }

    fn corpus(dir: &Path, speakers: usize, utts: usize, role: ManifestRole) -> DatasetManifest {
        write_corpus(dir, "t", &toy_speakers(speakers, 7), utts, 0.3, 24000, 1, role).unwrap().1
    }

    #[test]
    fn small_step_decreases_example_loss() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus(dir.path(), 1, 2, ManifestRole::TargetSpeaker);
        let spec = UpstreamSpec::mel(&AudioConfig::default());
        for decoder in DecoderType::ALL {
            let mut run = prepare_a2o(&manifest, &spec, &small_config(decoder)).unwrap();
            let before = run.loss_on(&[0], 11).unwrap();
            assert_eq!(run.step_on(&[0], 11).unwrap(), before);
            let after = run.loss_on(&[0], 11).unwrap();
            assert!(after < before, "{decoder}: {after} !< {before}");
        }
    }

    #[test]
    fn run_writes_log_and_checkpoints_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus(dir.path(), 1, 3, ManifestRole::TargetSpeaker);
        let spec = UpstreamSpec::mel(&AudioConfig::default());
        let config = small_config(DecoderType::Taco2Ar);
        let out_a = TrainOutput::in_dir(dir.path().join("a"));
        let out_b = TrainOutput::in_dir(dir.path().join("b"));
        let a = train_a2o(&manifest, &spec, &config, &out_a).unwrap();
        let b = train_a2o(&manifest, &spec, &config, &out_b).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.losses.len(), 3);
        assert!(a.losses.iter().all(|l| l.is_finite()));
        let read = |o: &TrainOutput| std::fs::read(o.final_path().unwrap()).unwrap();
        assert_eq!(read(&out_a), read(&out_b));
        assert!(out_a.checkpoint_path(2).unwrap().is_file());
        assert!(!out_a.checkpoint_path(3).unwrap().exists());
        let log = read_log(&out_a.log_path().unwrap()).unwrap();
        assert_eq!(log.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(a.checkpoint.step, 3);
    }

    #[test]
    fn a2o_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = UpstreamSpec::mel(&AudioConfig::default());
        let config = small_config(DecoderType::Simple);
        let empty = DatasetManifest::new(vec![], ManifestRole::TargetSpeaker).unwrap();
        assert!(matches!(prepare_a2o(&empty, &spec, &config), Err(Error::EmptyManifest)));

        let manifest = corpus(dir.path(), 1, 2, ManifestRole::TargetSpeaker);
        let ext = UpstreamSpec::external("hubert", 768, 20.0, dir.path().join("feats"));
        match prepare_a2o(&manifest, &ext, &config) {
            Err(Error::FeaturesMissing(ids)) => assert_eq!(ids.len(), 2),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    struct TableEncoder(Vec<(String, Vec<f64>)>);

    impl SpeakerEncoder for TableEncoder {
        fn embed(&self, _key: &str, wav_path: &Path) -> Result<SpeakerEmbedding> {
            let name = wav_path.file_name().unwrap().to_string_lossy();
            let (_, v) = self.0.iter().find(|(spk, _)| name.contains(&format!("_{spk}_"))).ok_or(Error::MissingEmbedding)?;
            SpeakerEmbedding::new(v.clone())
        }

        fn dim(&self) -> usize {
            self.0[0].1.len()
        }
    }

    #[test]
    fn a2a_trains_and_depends_on_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus(dir.path(), 2, 2, ManifestRole::MultiSpeaker);
        let spec = UpstreamSpec::mel(&AudioConfig::default());
        let config = small_config(DecoderType::Taco2Ar);
        let e1 = TableEncoder(vec![("SPK1".into(), vec![1.0, 0.0, 0.0]), ("SPK2".into(), vec![0.0, 1.0, 0.0])]);
        let e2 = TableEncoder(vec![("SPK1".into(), vec![0.0, 0.0, 1.0]), ("SPK2".into(), vec![0.0, 1.0, 0.0])]);
        let a = train_a2a(&manifest, &spec, &e1, &config, &TrainOutput::default()).unwrap();
        let b = train_a2a(&manifest, &spec, &e2, &config, &TrainOutput::default()).unwrap();
        assert!(a.checkpoint.params.config().speaker_conditioned);
        assert_ne!(a.checkpoint, b.checkpoint);

        let single = corpus(&dir.path().join("one"), 1, 2, ManifestRole::TargetSpeaker);
        let single = DatasetManifest::new(single.records().to_vec(), ManifestRole::SourceEval).unwrap();
        assert!(matches!(prepare_a2a(&single, &spec, &e1, &config), Err(Error::SingleSpeakerManifest)));

        let broken = TableEncoder(vec![("NOBODY".into(), vec![1.0, 0.0])]);
        assert!(matches!(
            prepare_a2a(&manifest, &spec, &broken, &config),
            Err(Error::AdapterForUtterance { .. })
        ));
    }
}
