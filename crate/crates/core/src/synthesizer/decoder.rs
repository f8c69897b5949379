//! Graph construction for the three decoder architectures.
//!
//! * `simple`: FFN -> LSTMP -> LSTMP -> linear(80)
//! * `simple_ar`: as `simple`, with the previous output frame (after
//!   dropout) concatenated onto the input of the first LSTMP
//! * `taco2_ar`: previous frame -> prenet (dropout always on), concatenated
//!   with the content frame (and speaker embedding) -> 2-layer LSTM ->
//!   linear(80) -> residual conv postnet. No attention, one frame out per
//!   frame in.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ModelParameters;
use super::tape::{Tape, Var};
use crate::domain::{DecoderType, FeatureSequence, MelSpectrogram, SpeakerEmbedding, MEL_BINS};
use crate::error::{Error, Result};

/// One training example set: raw content frames, normalized target mels
/// (equal lengths per utterance) and optional per-utterance embeddings.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub content: Vec<Array2<f64>>,
    pub targets: Vec<Array2<f64>>,
    pub embeddings: Option<Vec<SpeakerEmbedding>>,
}

enum Feedback<'a> {
    Teacher(&'a [Array2<f64>]),
    FreeRunning,
}

struct GraphOutput {
    pre: Var,
    post: Option<Var>,
    time: usize,
}

/// Appends `s` to a content frame.
pub fn condition_speaker(content: ArrayView1<'_, f64>, s: &SpeakerEmbedding, embedding_dim: usize) -> Result<Array1<f64>> {
    if s.dim() != embedding_dim {
        return Err(Error::DimMismatch { expected: embedding_dim, found: s.dim() });
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &[content, s.vector().view()]).expect("1-d concat"))
}

fn check_embedding<'a>(params: &ModelParameters, s: Option<&'a SpeakerEmbedding>) -> Result<Option<&'a SpeakerEmbedding>> {
    let cfg = params.config();
    match (cfg.speaker_conditioned, s) {
        (true, None) => Err(Error::MissingEmbedding),
        (false, Some(_)) => Err(Error::ExtraEmbedding),
        (true, Some(e)) => {
            let expected = cfg.embedding_dim.unwrap_or(0);
            if e.dim() != expected {
                return Err(Error::DimMismatch { expected, found: e.dim() });
            }
            Ok(Some(e))
        }
        (false, None) => Ok(None),
    }
}

struct Graph<'p> {
    params: &'p ModelParameters,
    vars: HashMap<&'p str, Var>,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    fn new(params: &'p ModelParameters, tape: &mut Tape, dropout_seed: u64) -> Self {
        let vars = params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, (name, t))| (name.as_str(), tape.param(i, t.clone())))
            .collect();
        Self {
            params,
            vars,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
        }
    }

    fn p(&self, name: &str) -> Var {
        self.vars[name]
    }

    /// Inverted dropout with a freshly drawn mask.
    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.params.config().ar_dropout;
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = Array2::from_shape_fn(tape.value(x).raw_dim(), |_| {
            if self.rng.random::<f64>() >= rate { keep } else { 0.0 }
        });
        tape.mul_const(x, mask)
    }

    fn lstm_step(&self, tape: &mut Tape, layer: &str, x: Var, state: (Var, Var), project: bool) -> (Var, Var) {
        let h = self.params.config().hidden_dim;
        let (r_prev, c_prev) = state;
        let input = tape.concat(&[x, r_prev]);
        let gates = tape.linear(input, self.p(&format!("{layer}.weight")), self.p(&format!("{layer}.bias")));
        let i = tape.slice_cols(gates, 0, h);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, 2 * h);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, 3 * h);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, 4 * h);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c_prev);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let hidden = tape.mul(o, tc);
        let out = if project {
            tape.matmul(hidden, self.p(&format!("{layer}.proj")))
        } else {
            hidden
        };
        (out, c)
    }

    fn run(
        &mut self,
        tape: &mut Tape,
        content: &[Array2<f64>],
        embeddings: Option<&Array2<f64>>,
        feedback: Feedback<'_>,
    ) -> GraphOutput {
        let cfg = self.params.config().clone();
        let batch = content.len();
        let time = content.iter().map(|c| c.nrows()).max().unwrap_or(0);
        let stats = self.params.input_stats();
        let normalized: Vec<Array2<f64>> = content.iter().map(|c| stats.normalize(c)).collect();
        let ar = cfg.decoder.is_autoregressive();
        let taco = cfg.decoder == DecoderType::Taco2Ar;

        let (rec_width, project) = if taco { (cfg.hidden_dim, false) } else { (cfg.lstmp_proj_dim, true) };
        let zero_state = |tape: &mut Tape| {
            (
                tape.constant(Array2::zeros((batch, rec_width))),
                tape.constant(Array2::zeros((batch, cfg.hidden_dim))),
            )
        };
        let mut s1 = zero_state(tape);
        let mut s2 = zero_state(tape);
        let speaker = embeddings.map(|e| tape.constant(e.clone()));

        let mut outputs: Vec<Var> = Vec::with_capacity(time);
        for t in 0..time {
            let frame = Array2::from_shape_fn((batch, cfg.input_dim), |(b, d)| {
                normalized[b].get((t, d)).copied().unwrap_or(0.0)
            });
            let x = tape.constant(frame);
            let prev = if !ar {
                None
            } else {
                let value = match (&feedback, t) {
                    (_, 0) => Array2::zeros((batch, MEL_BINS)),
                    (Feedback::Teacher(targets), _) => Array2::from_shape_fn((batch, MEL_BINS), |(b, d)| {
                        targets[b].get((t - 1, d)).copied().unwrap_or(0.0)
                    }),
                    (Feedback::FreeRunning, _) => tape.value(outputs[t - 1]).clone(),
                };
                Some(tape.constant(value))
            };

            let first_input = if taco {
                let mut p = prev.expect("taco2_ar is autoregressive");
                for i in 0..cfg.prenet_dims.len() {
                    let z = tape.linear(p, self.p(&format!("prenet.{i}.weight")), self.p(&format!("prenet.{i}.bias")));
                    let z = tape.relu(z);
                    p = self.dropout(tape, z);
                }
                match speaker {
                    Some(s) => tape.concat(&[p, x, s]),
                    None => tape.concat(&[p, x]),
                }
            } else {
                let z = tape.linear(x, self.p("ffn.weight"), self.p("ffn.bias"));
                let z = tape.relu(z);
                match prev {
                    Some(prev) => {
                        let d = self.dropout(tape, prev);
                        tape.concat(&[z, d])
                    }
                    None => z,
                }
            };

            let (l1, l2) = if taco { ("lstm1", "lstm2") } else { ("lstmp1", "lstmp2") };
            s1 = self.lstm_step(tape, l1, first_input, s1, project);
            s2 = self.lstm_step(tape, l2, s1.0, s2, project);
            let y = tape.linear(s2.0, self.p("out.weight"), self.p("out.bias"));
            outputs.push(y);
        }

        let pre = tape.stack_steps(&outputs);
        let post = cfg.has_postnet().then(|| {
            // zero every padded row before each convolution so batched
            // utterances see the same same-padding as when run alone
            let lengths: Vec<usize> = content.iter().map(|c| c.nrows()).collect();
            let mask = |width: usize| {
                Array2::from_shape_fn((batch * time, width), |(r, _)| {
                    if r % time < lengths[r / time] { 1.0 } else { 0.0 }
                })
            };
            let masked = tape.mul_const(pre, mask(MEL_BINS));
            let mut z = masked;
            for i in 0..cfg.postnet_layers {
                let col = tape.im2col(z, time, cfg.postnet_kernel);
                z = tape.linear(col, self.p(&format!("postnet.{i}.weight")), self.p(&format!("postnet.{i}.bias")));
                if i + 1 < cfg.postnet_layers {
                    z = tape.tanh(z);
                    let width = tape.value(z).ncols();
                    z = tape.mul_const(z, mask(width));
                }
            }
            tape.add(masked, z)
        });
        GraphOutput { pre, post, time }
    }
}

fn embeddings_matrix(params: &ModelParameters, embeddings: Option<&[SpeakerEmbedding]>, batch: usize) -> Result<Option<Array2<f64>>> {
    let cfg = params.config();
    match (cfg.speaker_conditioned, embeddings) {
        (true, None) => Err(Error::MissingEmbedding),
        (false, Some(_)) => Err(Error::ExtraEmbedding),
        (false, None) => Ok(None),
        (true, Some(list)) => {
            if list.len() != batch {
                return Err(Error::InvalidInput(format!("{} embeddings for {batch} utterances", list.len())));
            }
            let dim = cfg.embedding_dim.unwrap_or(0);
            let mut m = Array2::zeros((batch, dim));
            for (b, e) in list.iter().enumerate() {
                check_embedding(params, Some(e))?;
                m.row_mut(b).assign(e.vector());
            }
            Ok(Some(m))
        }
    }
}

fn unstack(stacked: &Array2<f64>, time: usize, b: usize, len: usize) -> Array2<f64> {
    stacked.slice(ndarray::s![b * time..b * time + len, ..]).to_owned()
}

fn check_batch(params: &ModelParameters, batch: &TrainingBatch) -> Result<()> {
    if batch.content.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    if batch.content.len() != batch.targets.len() {
        return Err(Error::InvalidInput("content / target count mismatch".into()));
    }
    for (c, t) in batch.content.iter().zip(&batch.targets) {
        if c.ncols() != params.config().input_dim {
            return Err(Error::DimMismatch { expected: params.config().input_dim, found: c.ncols() });
        }
        if t.ncols() != MEL_BINS {
            return Err(Error::DimMismatch { expected: MEL_BINS, found: t.ncols() });
        }
        if c.nrows() != t.nrows() {
            return Err(Error::LengthMismatch { left: c.nrows(), right: t.nrows() });
        }
        if c.nrows() == 0 {
            return Err(Error::EmptyInput("utterance"));
        }
    }
    Ok(())
}

fn batch_loss(tape: &mut Tape, out: &GraphOutput, targets: &[Array2<f64>]) -> Var {
    let time = out.time;
    let batch = targets.len();
    let valid: usize = targets.iter().map(|t| t.nrows()).sum();
    let weight_value = 1.0 / (valid * MEL_BINS) as f64;
    let mut target = Array2::zeros((batch * time, MEL_BINS));
    let mut weight = Array2::zeros((batch * time, MEL_BINS));
    for (b, t) in targets.iter().enumerate() {
        target.slice_mut(ndarray::s![b * time..b * time + t.nrows(), ..]).assign(t);
        weight.slice_mut(ndarray::s![b * time..b * time + t.nrows(), ..]).fill(weight_value);
    }
    let pre = tape.masked_l1(out.pre, target.clone(), weight.clone());
    match out.post {
        Some(post) => {
            let post = tape.masked_l1(post, target, weight);
            tape.add(pre, post)
        }
        None => pre,
    }
}

/// Teacher-forced masked L1 loss (pre + post postnet) and its gradient with
/// respect to every tensor, in [`ModelParameters::tensors`] order.
pub fn loss_and_gradients(params: &ModelParameters, batch: &TrainingBatch, dropout_seed: u64) -> Result<(f64, Vec<Array2<f64>>)> {
    check_batch(params, batch)?;
    let emb = embeddings_matrix(params, batch.embeddings.as_deref(), batch.content.len())?;
    let mut tape = Tape::new();
    let mut graph = Graph::new(params, &mut tape, dropout_seed);
    let out = graph.run(&mut tape, &batch.content, emb.as_ref(), Feedback::Teacher(&batch.targets));
    let loss = batch_loss(&mut tape, &out, &batch.targets);
    let value = tape.value(loss)[[0, 0]];
    let grads = tape
        .backward(loss, params.tensors().len())
        .into_iter()
        .zip(params.tensors())
        .map(|(g, (_, t))| g.unwrap_or_else(|| Array2::zeros(t.raw_dim())))
        .collect();
    Ok((value, grads))
}

/// Teacher-forced loss without gradients.
pub fn teacher_forced_loss(params: &ModelParameters, batch: &TrainingBatch, dropout_seed: u64) -> Result<f64> {
    check_batch(params, batch)?;
    let emb = embeddings_matrix(params, batch.embeddings.as_deref(), batch.content.len())?;
    let mut tape = Tape::new();
    let mut graph = Graph::new(params, &mut tape, dropout_seed);
    let out = graph.run(&mut tape, &batch.content, emb.as_ref(), Feedback::Teacher(&batch.targets));
    let loss = batch_loss(&mut tape, &out, &batch.targets);
    Ok(tape.value(loss)[[0, 0]])
}

fn content_frames(params: &ModelParameters, h: &FeatureSequence) -> Result<Array2<f64>> {
    if h.dim() != params.config().input_dim {
        return Err(Error::DimMismatch { expected: params.config().input_dim, found: h.dim() });
    }
    Ok(h.frames().mapv(|v| v as f64))
}

fn final_output(tape: &Tape, out: &GraphOutput, len: usize) -> Array2<f64> {
    unstack(tape.value(out.post.unwrap_or(out.pre)), out.time, 0, len)
}

/// Teacher-forced prediction in normalized target space. The AR models see
/// target frame `t-1` (zeros at `t = 0`); dropout is active.
pub fn forward_teacher(
    params: &ModelParameters,
    h: &FeatureSequence,
    target: &MelSpectrogram,
    s: Option<&SpeakerEmbedding>,
    dropout_seed: u64,
) -> Result<MelSpectrogram> {
    let content = content_frames(params, h)?;
    if h.num_frames() != target.num_frames() {
        return Err(Error::LengthMismatch { left: h.num_frames(), right: target.num_frames() });
    }
    let s = check_embedding(params, s)?;
    let emb = s.map(|e| e.vector().clone().insert_axis(ndarray::Axis(0)));
    let targets = [target.frames().mapv(|v| v as f64)];
    let mut tape = Tape::new();
    let mut graph = Graph::new(params, &mut tape, dropout_seed);
    let out = graph.run(&mut tape, std::slice::from_ref(&content), emb.as_ref(), Feedback::Teacher(&targets));
    MelSpectrogram::new(final_output(&tape, &out, content.nrows()).mapv(|v| v as f32), h.frame_shift_ms())
}

/// Free-running generation in normalized target space: one output frame per
/// input frame, each AR step fed the model's own previous (pre-postnet)
/// output. Dropout stays active, driven by `dropout_seed`.
pub fn forward_free_running(
    params: &ModelParameters,
    h: &FeatureSequence,
    s: Option<&SpeakerEmbedding>,
    dropout_seed: u64,
) -> Result<MelSpectrogram> {
    let content = content_frames(params, h)?;
    let s = check_embedding(params, s)?;
    let emb = s.map(|e| e.vector().clone().insert_axis(ndarray::Axis(0)));
    let mut tape = Tape::new();
    let mut graph = Graph::new(params, &mut tape, dropout_seed);
    let out = graph.run(&mut tape, std::slice::from_ref(&content), emb.as_ref(), Feedback::FreeRunning);
    MelSpectrogram::new(final_output(&tape, &out, content.nrows()).mapv(|v| v as f32), h.frame_shift_ms())
}
