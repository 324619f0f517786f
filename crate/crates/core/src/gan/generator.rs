use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::corpus::{EmbeddingMatrix, BOS, EOS};
use crate::error::{Error, Result};
use crate::nn::{stack_steps, Activation, Bound, Linear, LstmCell, ParamStore};

/// Differentiable token choice: softmax weights at temperature `L` and the
/// resulting convex combination of embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftArgmax {
    pub coefficients: Array1<f64>,
    pub embedding: Array1<f64>,
}

/// `softmax(L · logits) · W_e`.
pub fn soft_argmax(vocab_logits: &[f64], temperature: f64, embeddings: &EmbeddingMatrix) -> Result<SoftArgmax> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature must be positive and finite, got {temperature}")));
    }
    if vocab_logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("soft-argmax logits".into()));
    }
    if vocab_logits.len() != embeddings.vocab_size() {
        return Err(Error::Shape(format!(
            "{} logits for a vocabulary of {}",
            vocab_logits.len(),
            embeddings.vocab_size()
        )));
    }
    let scaled = Array2::from_shape_fn((1, vocab_logits.len()), |(_, j)| temperature * vocab_logits[j]);
    let coefficients = softmax_rows(&scaled).index_axis_move(Axis(0), 0);
    let embedding = coefficients.dot(&embeddings.matrix);
    Ok(SoftArgmax { coefficients, embedding })
}

fn soft_argmax_var<'t>(logits: Var<'t>, temperature: f64, embeddings: Var<'t>) -> (Var<'t>, Var<'t>) {
    let coeff = logits.scale(temperature).softmax_rows();
    (coeff, coeff.matmul(embeddings))
}

/// LSTM generator. The latent code (plus optional one-hot condition) sets the
/// initial hidden state; each step feeds back the soft-argmax embedding of
/// the previous step, starting from BOS.
#[derive(Debug, Clone)]
pub struct Generator {
    pub params: ParamStore,
    init: Linear,
    cell: LstmCell,
    out: Linear,
    pub d_z: usize,
    pub condition_classes: usize,
    pub temperature: f64,
}

/// One batched rollout recorded on a tape.
pub struct Rollout<'t> {
    /// `(batch·max_len)×d_e`, sample-major; rows after a sample's EOS are zero.
    pub soft_rows: Var<'t>,
    /// Per-step soft-argmax weights, each `batch×|V|`.
    pub coefficients: Vec<Var<'t>>,
    /// Argmax tokens per sample, cut after the first EOS.
    pub tokens: Vec<Vec<u32>>,
}

/// Single-sample output of [`Generator::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    /// `steps×d_e`, one row per emitted token.
    pub soft_sequence: Array2<f64>,
    /// `steps×|V|` soft-argmax weights.
    pub coefficients: Array2<f64>,
    pub tokens: Vec<u32>,
}

impl Generator {
    pub fn new<R: Rng>(
        rng: &mut R,
        vocab_size: usize,
        d_e: usize,
        d_h: usize,
        d_z: usize,
        condition_classes: usize,
        temperature: f64,
    ) -> Self {
        let mut params = ParamStore::new();
        let init = Linear::new(&mut params, rng, "gen.init", d_z + condition_classes, d_h);
        let cell = LstmCell::new(&mut params, rng, "gen.lstm", d_e, d_h, Activation::Tanh);
        let out = Linear::new(&mut params, rng, "gen.out", d_h, vocab_size);
        Generator { params, init, cell, out, d_z, condition_classes, temperature }
    }

    /// Width of the latent input including the condition block.
    pub fn input_dim(&self) -> usize {
        self.d_z + self.condition_classes
    }

    /// Batched rollout of `max_len` steps. `latent` is `batch×input_dim`.
    pub fn rollout<'t>(
        &self,
        p: &Bound<'t>,
        latent: Var<'t>,
        embeddings: Var<'t>,
        max_len: usize,
    ) -> Rollout<'t> {
        let tape = latent.tape();
        let batch = latent.shape().0;
        let bos = embeddings.value().row(BOS as usize).to_owned();
        let mut x = tape.constant(Array2::from_shape_fn((batch, bos.len()), |(_, j)| bos[j]));
        let h0 = self.init.forward(p, latent).tanh();
        let mut state = (h0, tape.constant(Array2::zeros(h0.shape())));

        let mut alive = vec![true; batch];
        let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); batch];
        let mut steps = Vec::with_capacity(max_len);
        let mut coefficients = Vec::with_capacity(max_len);
        for _ in 0..max_len {
            state = self.cell.step(p, x, state);
            let logits = self.out.forward(p, state.0);
            let (coeff, emb) = soft_argmax_var(logits, self.temperature, embeddings);
            let logits_v = logits.value();
            let mask = Array2::from_shape_fn((batch, 1), |(b, _)| if alive[b] { 1.0 } else { 0.0 });
            for (b, row) in logits_v.rows().into_iter().enumerate() {
                if alive[b] {
                    let tok = argmax(row.as_slice().expect("contiguous row")) as u32;
                    tokens[b].push(tok);
                    if tok == EOS {
                        alive[b] = false;
                    }
                }
            }
            let masked = emb.mul(tape.constant(mask.broadcast(emb.shape()).expect("broadcast").to_owned()));
            steps.push(masked);
            coefficients.push(coeff);
            x = emb;
        }
        Rollout { soft_rows: stack_steps(&steps), coefficients, tokens }
    }

    /// Deterministic single-sample rollout, stopping at EOS or `max_len`.
    pub fn generate(&self, latent: &[f64], embeddings: &EmbeddingMatrix, max_len: usize) -> Result<GeneratedSequence> {
        if latent.len() != self.input_dim() {
            return Err(Error::Shape(format!("latent has {} entries, expected {}", latent.len(), self.input_dim())));
        }
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let z = tape.constant(Array2::from_shape_vec((1, latent.len()), latent.to_vec()).expect("row vector"));
        let emb = tape.constant(embeddings.matrix.clone());
        let rollout = self.rollout(&p, z, emb, max_len);
        let tokens = rollout.tokens.into_iter().next().unwrap_or_default();
        let steps = tokens.len();
        let soft = rollout.soft_rows.value();
        let coeff_rows: Vec<_> = rollout.coefficients[..steps].iter().map(|c| c.value()).collect();
        let views: Vec<_> = coeff_rows.iter().map(|c| c.view()).collect();
        Ok(GeneratedSequence {
            soft_sequence: soft.slice(ndarray::s![..steps, ..]).to_owned(),
            coefficients: ndarray::concatenate(Axis(0), &views).expect("equal widths"),
            tokens,
        })
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
