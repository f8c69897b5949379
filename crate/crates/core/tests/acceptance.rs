//! Acceptance gate: one PASS/FAIL line per criterion on stderr, then a single
//! assertion over all of them. Criteria run sequentially so the timing
//! limits are measured without contention.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use recsyn_core::converter::{average_embedding, convert, vocode_native, SpeakerEncoder};
use recsyn_core::domain::{
    decode_features, encode_features, read_wav, AppConfig, AudioConfig, DecoderType, FeatureSequence, ManifestRole,
    ModelConfig, SpeakerEmbedding, MEL_BINS,
};
use recsyn_core::evaluator::{
    dtw_align, mcd, mcd_frames, mel_cepstra, mel_cepstra_from_mel, published_table3, subset_search, wer, word_errors,
};
use recsyn_core::recognizer::{RecognizerInput, UpstreamSpec};
use recsyn_core::synthesizer::{
    build_decoder, decode_checkpoint, encode_checkpoint, loss_and_gradients, teacher_forced_loss, Checkpoint,
    DecoderConfig, FeatureStats, TrainingBatch,
};
use recsyn_core::toy::{toy_speakers, write_corpus};
use recsyn_core::trainer::{prepare_a2a, prepare_a2o, TrainOutput};
use recsyn_core::Result;

type Outcome = std::result::Result<String, String>;

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// 1 ---------------------------------------------------------------------------

fn correlation_reproduction() -> Outcome {
    let start = Instant::now();
    let search = e2s(subset_search())?;
    let elapsed = start.elapsed();
    let best = &search[0];
    let published = published_table3();
    let mut worst = 0.0f64;
    for i in 0..5 {
        for j in i + 1..5 {
            worst = worst.max((best.matrix.values[i][j] - published.values[i][j]).abs());
        }
    }
    check(worst <= 0.02, || format!("max |diff| {worst:.4} > 0.02 (rows: {})", best.label))?;
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "rows `{}` ({} systems), max |diff| {worst:.4}, corr(MCD,Nat) {:.3}, {:.1} ms",
        best.label,
        best.systems.len(),
        best.matrix.values[0][3],
        elapsed.as_secs_f64() * 1e3
    ))
}

// 2 ---------------------------------------------------------------------------

fn memo_edits(r: &[u8], h: &[u8], i: usize, j: usize, memo: &mut [[Option<usize>; 7]; 7]) -> usize {
    if let Some(v) = memo[i][j] {
        return v;
    }
    let v = if i == r.len() {
        h.len() - j
    } else if j == h.len() {
        r.len() - i
    } else {
        let keep = memo_edits(r, h, i + 1, j + 1, memo) + usize::from(r[i] != h[j]);
        keep.min(memo_edits(r, h, i + 1, j, memo) + 1).min(memo_edits(r, h, i, j + 1, memo) + 1)
    };
    memo[i][j] = Some(v);
    v
}

fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for sym in 0..3u8 {
                let mut t: Vec<u8> = s.clone();
                t.push(sym);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn enumerate_paths(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
    let cost = acc + a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    if (i, j) == (a.nrows() - 1, b.nrows() - 1) {
        *best = best.min(cost);
        return;
    }
    if i + 1 < a.nrows() {
        enumerate_paths(a, b, i + 1, j, cost, best);
    }
    if j + 1 < b.nrows() {
        enumerate_paths(a, b, i, j + 1, cost, best);
    }
    if i + 1 < a.nrows() && j + 1 < b.nrows() {
        enumerate_paths(a, b, i + 1, j + 1, cost, best);
    }
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let seqs = all_sequences(6);
    let mut pairs = 0usize;
    for r in seqs.iter().filter(|s| !s.is_empty()) {
        for h in &seqs {
            let mut memo = [[None; 7]; 7];
            let expected = memo_edits(r, h, 0, 0, &mut memo);
            let got = word_errors(r, h);
            check(got == expected, || format!("edits {r:?} -> {h:?}: {got} vs {expected}"))?;
            let w = e2s(wer(r, h))?;
            check((w - 100.0 * expected as f64 / r.len() as f64).abs() < 1e-9, || format!("WER {r:?} {h:?}"))?;
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..200 {
        let (ta, tb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let dim = rng.random_range(1..=3);
        let a = Array2::from_shape_fn((ta, dim), |_| rng.random_range(-2.0..2.0));
        let b = Array2::from_shape_fn((tb, dim), |_| rng.random_range(-2.0..2.0));
        let path = e2s(dtw_align(a.view(), b.view()))?;
        let mut best = f64::INFINITY;
        enumerate_paths(&a, &b, 0, 0, 0.0, &mut best);
        check((path.cost - best).abs() < 1e-9, || format!("instance {n}: dtw {} vs exhaustive {best}", path.cost))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} token pairs, 200 DTW instances, {:.1} s", elapsed.as_secs_f64()))
}

// 3 ---------------------------------------------------------------------------

fn mcd_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = Array2::from_shape_fn((40, 24), |_| rng.random_range(-1.0..1.0));
    let same = e2s(mcd_frames(reference.view(), reference.view()))?;
    check(same == 0.0, || format!("identical inputs gave {same}"))?;
    let expected = 10.0 / std::f64::consts::LN_10 * 2.0f64.sqrt();
    for dim in [0, 7, 23] {
        let mut shifted = reference.clone();
        shifted.column_mut(dim).mapv_inplace(|v| v + 1.0);
        let got = e2s(mcd_frames(reference.view(), shifted.view()))?;
        check((got - expected).abs() < 1e-9, || format!("offset in dim {dim}: {got} vs {expected}"))?;
    }
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Array2::from_shape_fn((60, 24), |_| rng.random_range(-1.0..1.0));
        let noise = Array2::from_shape_fn((60, 24), |_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
        let small = e2s(mcd_frames(base.view(), (&base + &(&noise * 0.1)).view()))?;
        let large = e2s(mcd_frames(base.view(), (&base + &(&noise * 0.2)).view()))?;
        check(large > small, || format!("seed {seed}: sigma 0.2 gave {large} <= sigma 0.1 gave {small}"))?;
    }
    Ok(format!("0 dB on identity, unit offset {expected:.9} dB, monotone over 10 seeds"))
}

// 4 ---------------------------------------------------------------------------

fn toy_model(decoder: DecoderType) -> AppConfig {
    let mut c = AppConfig::default();
    let width = 96;
    c.model = ModelConfig {
        decoder,
        hidden_dim: width,
        lstmp_proj_dim: width,
        prenet_dims: vec![width, width],
        postnet_channels: width,
        ..ModelConfig::default()
    };
    c.training.steps = 500;
    c.training.batch_size = 8;
    c.training.learning_rate = if decoder == DecoderType::Taco2Ar { 4e-3 } else { 8e-3 };
    c.training.seed = 0;
    c
}

fn mel_mcd(reference_wav: &Path, checkpoint: &Checkpoint, spec: &UpstreamSpec, audio: &AudioConfig) -> Result<f64> {
    let wave = read_wav(reference_wav, Some(audio.sample_rate))?;
    let converted = convert(RecognizerInput::Wave(&wave), checkpoint, spec, None, audio, 0)?;
    mcd(&mel_cepstra(&wave, audio, 24)?, &mel_cepstra_from_mel(&converted, 24)?)
}

fn toy_a2o() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, manifest) = e2s(write_corpus(dir.path(), "toy", &toy_speakers(1, 3), 20, 2.0, 24000, 0, ManifestRole::TargetSpeaker))?;
    let audio = AudioConfig::default();
    let spec = UpstreamSpec::mel(&audio);
    let held_in = manifest.records()[0].wav_path.clone();
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for decoder in DecoderType::ALL {
        let config = toy_model(decoder);
        let start = Instant::now();
        let mut run = e2s(prepare_a2o(&manifest, &spec, &config))?;
        let untrained = run.checkpoint();
        let step1 = e2s(run.training_set_loss(0))?;
        e2s(run.run(&TrainOutput::default()))?;
        let elapsed = start.elapsed();
        let last = e2s(run.training_set_loss(0))?;
        let trained = run.checkpoint();
        let before = e2s(mel_mcd(&held_in, &untrained, &spec, &audio))?;
        let after = e2s(mel_mcd(&held_in, &trained, &spec, &audio))?;
        let ratio = last / step1;
        details.push(format!(
            "{decoder}: loss {step1:.3}->{last:.3} ({:.1}%), MCD {before:.2}->{after:.2} dB, {:.0} s",
            100.0 * ratio,
            elapsed.as_secs_f64()
        ));
        if ratio >= 0.1 {
            failures.push(format!("{decoder} loss ratio {ratio:.3}"));
        }
        if after >= before {
            failures.push(format!("{decoder} MCD {after:.2} >= untrained {before:.2}"));
        }
        if elapsed >= Duration::from_secs(600) {
            failures.push(format!("{decoder} took {elapsed:?}"));
        }
    }
    if failures.is_empty() {
        Ok(details.join("; "))
    } else {
        Err(format!("{} [{}]", failures.join(", "), details.join("; ")))
    }
}

// 5 ---------------------------------------------------------------------------

/// Maps the speaker part of an utterance id to a fixed random unit vector.
struct HashToSphere {
    dim: usize,
}

impl HashToSphere {
    fn vector(&self, speaker: &str) -> Result<SpeakerEmbedding> {
        let seed = speaker.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        SpeakerEmbedding::new((0..self.dim).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>())
    }
}

impl SpeakerEncoder for HashToSphere {
    fn embed(&self, key: &str, _wav_path: &Path) -> Result<SpeakerEmbedding> {
        let speaker = key.split('_').nth(1).unwrap_or(key);
        self.vector(speaker)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

fn toy_a2a() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, manifest) = e2s(write_corpus(dir.path(), "multi", &toy_speakers(4, 11), 3, 1.0, 24000, 5, ManifestRole::MultiSpeaker))?;
    let audio = AudioConfig::default();
    let spec = UpstreamSpec::mel(&audio);
    let encoder = HashToSphere { dim: 16 };
    let mut config = toy_model(DecoderType::Taco2Ar);
    config.model.hidden_dim = 32;
    config.model.lstmp_proj_dim = 32;
    config.model.prenet_dims = vec![32, 32];
    config.model.postnet_channels = 32;
    config.training.steps = 40;
    config.training.batch_size = 4;
    let mut run = e2s(prepare_a2a(&manifest, &spec, &encoder, &config))?;
    let initial = e2s(run.training_set_loss(0))?;
    e2s(run.run(&TrainOutput::default()))?;
    let last = e2s(run.training_set_loss(0))?;
    check(last < initial, || format!("loss {initial:.4} -> {last:.4} did not decrease"))?;

    let ck = run.checkpoint();
    let by_speaker = |spk: &str| -> Result<SpeakerEmbedding> {
        let es: Vec<SpeakerEmbedding> = manifest
            .records()
            .iter()
            .filter(|r| r.speaker_id == spk)
            .map(|r| encoder.embed(&r.utt_id, &r.wav_path))
            .collect::<Result<_>>()?;
        average_embedding(&es)
    };
    let (s1, s2) = (e2s(by_speaker("SPK3"))?, e2s(by_speaker("SPK4"))?);
    let source = &manifest.records()[0];
    let y1 = e2s(convert(RecognizerInput::Record(source), &ck, &spec, Some(&s1), &audio, 0))?;
    let y2 = e2s(convert(RecognizerInput::Record(source), &ck, &spec, Some(&s2), &audio, 0))?;
    let l1 = (y1.frames() - y2.frames()).mapv(|v| v.abs() as f64).mean().unwrap_or(0.0);
    check(l1 > 1e-3, || format!("outputs differ by only {l1:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for draw in 0..1000 {
        let dim = rng.random_range(2..=32);
        let count = rng.random_range(1..=8);
        let es: Vec<SpeakerEmbedding> = (0..count)
            .map(|_| SpeakerEmbedding::new((0..dim).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>()))
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?;
        let same = e2s(average_embedding(&vec![es[0].clone(); count]))?;
        let idem = same.vector().iter().zip(es[0].vector()).all(|(a, b)| (a - b).abs() < 1e-12);
        check(idem, || format!("draw {draw}: averaging copies changed the embedding"))?;
        match average_embedding(&es) {
            Ok(avg) => {
                let norm = avg.vector().dot(avg.vector()).sqrt();
                check((norm - 1.0).abs() < 1e-9, || format!("draw {draw}: norm {norm}"))?;
            }
            Err(recsyn_core::Error::ZeroMeanEmbedding) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(format!("loss {initial:.3}->{last:.3}, L1 between targets {l1:.4}, 1000 averaging draws"))
}

// 6 ---------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for decoder in DecoderType::ALL {
        let model = ModelConfig {
            decoder,
            hidden_dim: 8,
            lstmp_proj_dim: 8,
            prenet_dims: vec![8, 8],
            postnet_layers: 3,
            postnet_channels: 8,
            ..ModelConfig::default()
        };
        let cfg = DecoderConfig::from_model_config(&model, 6);
        let params = e2s(build_decoder(&cfg, 17))?;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let content = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((4, MEL_BINS), |_| rng.random_range(-1.0..1.0));
        let batch = TrainingBatch { content: vec![content], targets: vec![target], embeddings: None };
        let (_, grads) = e2s(loss_and_gradients(&params, &batch, 4))?;
        let eps = 1e-5;
        for _ in 0..20 {
            let ti = rng.random_range(0..params.tensors().len());
            let ei = rng.random_range(0..params.tensors()[ti].1.len());
            let x = params.tensors()[ti].1.as_slice().unwrap()[ei];
            let eval = |v: f64| -> std::result::Result<f64, String> {
                let mut p = params.clone();
                e2s(p.set_element(ti, ei, v))?;
                e2s(teacher_forced_loss(&p, &batch, 4))
            };
            let numeric = (eval(x + eps)? - eval(x - eps)?) / (2.0 * eps);
            let analytic = grads[ti].as_slice().unwrap()[ei];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            check(rel < 1e-3, || {
                format!("{decoder} {}[{ei}]: numeric {numeric:.6e} analytic {analytic:.6e}", params.tensors()[ti].0)
            })?;
        }
    }
    Ok(format!("3 decoders x 20 parameters, worst relative error {worst:.2e}"))
}

// 7 ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, manifest) = e2s(write_corpus(dir.path(), "det", &toy_speakers(1, 4), 4, 0.5, 24000, 2, ManifestRole::TargetSpeaker))?;
    let audio = AudioConfig { griffin_lim_iters: 8, ..AudioConfig::default() };
    let spec = UpstreamSpec::mel(&audio);
    let mut config = toy_model(DecoderType::Taco2Ar);
    config.model.hidden_dim = 16;
    config.model.lstmp_proj_dim = 16;
    config.model.prenet_dims = vec![16, 16];
    config.model.postnet_channels = 16;
    config.training.steps = 10;
    config.training.batch_size = 2;
    config.training.checkpoint_interval = 5;
    let mut outputs = Vec::new();
    for run_dir in ["a", "b"] {
        let out = TrainOutput::in_dir(dir.path().join(run_dir));
        let mut run = e2s(prepare_a2o(&manifest, &spec, &config))?;
        e2s(run.run(&out))?;
        let ck_bytes = std::fs::read(out.final_path().unwrap()).map_err(|e| e.to_string())?;
        let mid_bytes = std::fs::read(out.checkpoint_path(5).unwrap()).map_err(|e| e.to_string())?;
        let ck = e2s(decode_checkpoint(&ck_bytes))?;
        let mel = e2s(convert(RecognizerInput::Record(&manifest.records()[1]), &ck, &spec, None, &audio, 7))?;
        let wave = e2s(vocode_native(&mel, &audio))?;
        let wave_bits: Vec<u32> = wave.samples().iter().map(|s| s.to_bits()).collect();
        outputs.push((ck_bytes, mid_bytes, encode_features(&mel.to_features("m")), wave_bits));
    }
    check(outputs[0].0 == outputs[1].0, || "final checkpoints differ".into())?;
    check(outputs[0].1 == outputs[1].1, || "intermediate checkpoints differ".into())?;
    check(outputs[0].2 == outputs[1].2, || "converted mels differ".into())?;
    check(outputs[0].3 == outputs[1].3, || "vocoded waveforms differ".into())?;
    Ok(format!("checkpoints ({} bytes), mels and waveforms identical across runs", outputs[0].0.len()))
}

// 8 ---------------------------------------------------------------------------

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..100 {
        let (t, d) = (rng.random_range(1..50), rng.random_range(1..100));
        let special = [0.0f32, -0.0, f32::MIN_POSITIVE, f32::MAX, f32::MIN, 1e-38];
        let frames = Array2::from_shape_fn((t, d), |_| {
            if rng.random_bool(0.05) {
                special[rng.random_range(0..special.len())]
            } else {
                f32::from_bits(rng.random_range(0..0x7f00_0000u32)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            }
        });
        let shift = rng.random_range(1.0f32..50.0);
        let seq = e2s(FeatureSequence::new(frames, shift, "x"))?;
        let bytes = encode_features(&seq);
        let back = e2s(decode_features(&bytes, "x"))?;
        let same = back.frames().iter().zip(seq.frames()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.frame_shift_ms().to_bits() == shift.to_bits()
            && back.frames().dim() == seq.frames().dim();
        check(same, || format!("feature instance {n} changed"))?;
        check(encode_features(&back) == bytes, || format!("feature instance {n} re-encodes differently"))?;
    }
    for n in 0..100 {
        let decoder = DecoderType::ALL[rng.random_range(0..3)];
        let conditioned = decoder == DecoderType::Taco2Ar && rng.random_bool(0.5);
        let model = ModelConfig {
            decoder,
            hidden_dim: rng.random_range(1..6),
            lstmp_proj_dim: rng.random_range(1..6),
            prenet_dims: vec![rng.random_range(1..5); rng.random_range(1..3)],
            postnet_layers: rng.random_range(2..4),
            postnet_channels: rng.random_range(1..5),
            postnet_kernel: [1, 3, 5][rng.random_range(0..3)],
            speaker_conditioned: conditioned,
            embedding_dim: rng.random_range(1..5),
            ..ModelConfig::default()
        };
        let input_dim = rng.random_range(1..10);
        let cfg = DecoderConfig::from_model_config(&model, input_dim);
        let mut params = e2s(build_decoder(&cfg, rng.random()))?;
        let stats = |rng: &mut ChaCha8Rng, d: usize| FeatureStats {
            mean: (0..d).map(|_| rng.random_range(-5.0..5.0)).collect(),
            std: (0..d).map(|_| rng.random_range(0.01..5.0)).collect(),
        };
        e2s(params.set_input_stats(stats(&mut rng, input_dim)))?;
        let ck = Checkpoint { params, target_stats: stats(&mut rng, MEL_BINS), step: rng.random() };
        let bytes = encode_checkpoint(&ck);
        let back = e2s(decode_checkpoint(&bytes))?;
        check(back == ck, || format!("checkpoint instance {n} changed"))?;
        check(encode_checkpoint(&back) == bytes, || format!("checkpoint instance {n} re-encodes differently"))?;
    }
    Ok("100 feature files and 100 checkpoints bit-exact".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("correlation reproduction", correlation_reproduction),
        ("metric oracles", metric_oracles),
        ("MCD closed forms", mcd_closed_forms),
        ("toy end-to-end A2O", toy_a2o),
        ("toy A2A", toy_a2a),
        ("gradient check", gradient_check),
        ("determinism", determinism),
        ("format round-trips", round_trips),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => report(&format!("PASS {}. {name} ({secs:.1} s): {detail}", i + 1)),
            Err(why) => {
                report(&format!("FAIL {}. {name} ({secs:.1} s): {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
