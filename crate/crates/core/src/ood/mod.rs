//! LSTM autoencoder over layer-statistics sequences, trained and calibrated on
//! baseline data only.

mod threshold;

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Bound, Linear, LstmCell, ParamStore, Tensor};
use crate::stats::{LayerStatSequence, StatsDataset};

pub use threshold::{calibrate, calibrate_threshold, CalibratedThreshold, ReconstructionReport, DEFAULT_QUANTILE};

const FORMAT: &str = "deepstat-ae";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub d_ae: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound; training usually stops earlier on `patience`.
    pub epochs: usize,
    pub patience: usize,
    /// Set by the caller; not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { d_ae: 64, activation: Activation::Tanh, learning_rate: 1e-3, batch_size: 32, epochs: 200, patience: 10, seed: 0 }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_ae == 0 || self.batch_size == 0 {
            return Err(Error::Config("ae.d_ae and ae.batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("ae.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder LSTM, bottleneck (final encoder state, repeated), decoder LSTM and
/// an output projection back to `d_stat`.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub num_layers: usize,
    pub d_stat: usize,
    pub params: ParamStore,
    encoder: LstmCell,
    decoder: LstmCell,
    out: Linear,
}

/// Per-step inputs and loss weights for a batch.
struct StepBatch {
    inputs: Vec<Array2<f64>>,
    weights: Vec<Array2<f64>>,
}

impl Autoencoder {
    pub fn new(config: AeConfig, num_layers: usize, d_stat: usize) -> Result<Self> {
        config.validate()?;
        if num_layers == 0 || d_stat == 0 {
            return Err(Error::Shape("autoencoder needs at least one layer of positive width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = LstmCell::new(&mut params, &mut rng, "encoder", d_stat, config.d_ae, config.activation);
        let decoder = LstmCell::new(&mut params, &mut rng, "decoder", config.d_ae, config.d_ae, config.activation);
        let out = Linear::new(&mut params, &mut rng, "output", config.d_ae, d_stat);
        Ok(Autoencoder { config, num_layers, d_stat, params, encoder, decoder, out })
    }

    fn forward<'t>(&self, p: &Bound<'t>, inputs: &[Var<'t>]) -> Vec<Var<'t>> {
        let tape = inputs[0].tape();
        let batch = inputs[0].shape().0;
        let mut state = self.encoder.zero_state(tape, batch);
        for &x in inputs {
            state = self.encoder.step(p, x, state);
        }
        let bottleneck = state.0;
        let mut dec = self.decoder.zero_state(tape, batch);
        (0..inputs.len())
            .map(|_| {
                dec = self.decoder.step(p, bottleneck, dec);
                self.out.forward(p, dec.0)
            })
            .collect()
    }

    fn check(&self, seq: &LayerStatSequence) -> Result<()> {
        if seq.padded.dim() != (self.num_layers, self.d_stat) || seq.mask.dim() != seq.padded.dim() {
            return Err(Error::Shape(format!(
                "sequence {} is {:?}, autoencoder expects ({}, {})",
                seq.sample_id,
                seq.padded.dim(),
                self.num_layers,
                self.d_stat
            )));
        }
        Ok(())
    }

    /// Masked inputs (masked entries forced to zero) and per-entry weights so
    /// that the weighted squared error sums to the batch mean of per-sample
    /// masked MSEs.
    fn step_batch(&self, seqs: &[&LayerStatSequence]) -> Result<StepBatch> {
        let n = seqs.len();
        let mut inputs = vec![Array2::zeros((n, self.d_stat)); self.num_layers];
        let mut weights = vec![Array2::zeros((n, self.d_stat)); self.num_layers];
        for (b, seq) in seqs.iter().enumerate() {
            self.check(seq)?;
            let count = seq.mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::InvalidInput(format!("sequence {} is fully masked", seq.sample_id)));
            }
            let w = 1.0 / (count as f64 * n as f64);
            for t in 0..self.num_layers {
                for c in 0..self.d_stat {
                    if seq.mask[[t, c]] {
                        inputs[t][[b, c]] = seq.padded[[t, c]];
                        weights[t][[b, c]] = w;
                    }
                }
            }
        }
        Ok(StepBatch { inputs, weights })
    }

    fn batch_loss<'t>(&self, tape: &'t Tape, p: &Bound<'t>, batch: &StepBatch) -> Var<'t> {
        let xs: Vec<Var> = batch.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let ys = self.forward(p, &xs);
        ys.iter()
            .zip(&xs)
            .zip(&batch.weights)
            .map(|((&y, &x), w)| y.sub(x).square().mul(tape.constant(w.clone())).sum())
            .reduce(|a, b| a.add(b))
            .expect("at least one layer")
    }

    /// Mean of per-sample masked MSEs over `seqs`.
    pub fn loss(&self, seqs: &[&LayerStatSequence]) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let batch = self.step_batch(seqs)?;
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        Ok(self.batch_loss(&tape, &p, &batch).scalar())
    }

    /// Batch loss and its gradient with respect to every parameter, in store order.
    pub fn loss_and_gradients(&self, seqs: &[&LayerStatSequence]) -> Result<(f64, Vec<Array2<f64>>)> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let batch = self.step_batch(seqs)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let loss = self.batch_loss(&tape, &p, &batch);
        let grads = tape.backward(loss);
        Ok((loss.scalar(), p.gradients(&grads)))
    }

    /// Reconstructions of a batch, one `layers × d_stat` matrix per sequence.
    pub fn reconstruct_batch(&self, seqs: &[&LayerStatSequence]) -> Result<Vec<Array2<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.step_batch(seqs)?;
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let xs: Vec<Var> = batch.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let ys: Vec<Array2<f64>> = self.forward(&p, &xs).iter().map(|y| y.value()).collect();
        Ok((0..seqs.len())
            .map(|b| Array2::from_shape_fn((self.num_layers, self.d_stat), |(t, c)| ys[t][[b, c]]))
            .collect())
    }

    pub fn reconstruct(&self, seq: &LayerStatSequence) -> Result<Array2<f64>> {
        Ok(self.reconstruct_batch(&[seq])?.remove(0))
    }

    /// Reconstruction error of one scaled sequence.
    pub fn score(&self, seq: &LayerStatSequence) -> Result<f64> {
        reconstruction_error(seq, &self.reconstruct(seq)?)
    }

    pub fn score_all(&self, seqs: &[LayerStatSequence]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let refs: Vec<&LayerStatSequence> = chunk.iter().collect();
            for (seq, recon) in chunk.iter().zip(self.reconstruct_batch(&refs)?) {
                out.push(reconstruction_error(seq, &recon)?);
            }
        }
        Ok(out)
    }
}

/// Mean squared error over the unmasked entries of `input`.
pub fn reconstruction_error(input: &LayerStatSequence, reconstruction: &Array2<f64>) -> Result<f64> {
    if input.padded.dim() != reconstruction.dim() {
        return Err(Error::Shape(format!(
            "reconstruction is {:?}, input is {:?}",
            reconstruction.dim(),
            input.padded.dim()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    ndarray::Zip::from(&input.padded).and(&input.mask).and(reconstruction).for_each(|&x, &m, &y| {
        if m {
            sum += (y - x) * (y - x);
            count += 1;
        }
    });
    if count == 0 {
        return Err(Error::InvalidInput(format!("sequence {} is fully masked", input.sample_id)));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeLossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

impl AeLossRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,validation_loss";

    pub fn csv_row(&self) -> String {
        format!("{},{:.10e},{:.10e}", self.epoch, self.train_loss, self.validation_loss)
    }
}

/// Rejects any dataset that is unscaled, tagged as novel, or holds novel sequences.
pub fn ensure_baseline(dataset: &StatsDataset, role: &str) -> Result<()> {
    if dataset.contains_novel() || dataset.manifest.split == "novel" {
        return Err(Error::BaselineContract(format!(
            "{role} data `{}` contains novel samples; only baseline statistics are allowed",
            dataset.manifest.split
        )));
    }
    if dataset.manifest.scaler_id.is_none() || dataset.sequences.iter().any(|s| !s.scaled) {
        return Err(Error::InvalidInput(format!("{role} data `{}` is not scaled", dataset.manifest.split)));
    }
    Ok(())
}

pub struct AeTrainResult {
    pub model: Autoencoder,
    pub losses: Vec<AeLossRecord>,
    pub best_epoch: usize,
}

/// Minibatch Adam on the masked MSE with early stopping on validation loss.
/// The returned model holds the parameters of the best validation epoch.
pub fn train_autoencoder(train: &StatsDataset, validation: &StatsDataset, config: &AeConfig) -> Result<AeTrainResult> {
    ensure_baseline(train, "autoencoder training")?;
    ensure_baseline(validation, "autoencoder validation")?;
    if train.sequences.is_empty() || validation.sequences.is_empty() {
        return Err(Error::InvalidInput("autoencoder training needs non-empty train and validation sets".into()));
    }
    if train.manifest.scaler_id != validation.manifest.scaler_id
        || train.manifest.source_checkpoint_id != validation.manifest.source_checkpoint_id
    {
        return Err(Error::ArtifactMismatch("train and validation statistics have different provenance".into()));
    }
    let mut model = Autoencoder::new(config.clone(), train.manifest.layers.len(), train.manifest.d_stat)?;
    let validation_refs: Vec<&LayerStatSequence> = validation.sequences.iter().collect();
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA5A5_5A5A);
    let mut order: Vec<usize> = (0..train.sequences.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut losses = Vec::new();
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LayerStatSequence> = chunk.iter().map(|&i| &train.sequences[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grads);
        }
        let train_loss = total / order.len() as f64;
        let validation_loss = model.loss(&validation_refs)?;
        if !validation_loss.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder validation loss at epoch {epoch}")));
        }
        log::info!("ae epoch {epoch}: train {train_loss:.6} validation {validation_loss:.6}");
        losses.push(AeLossRecord { epoch, train_loss, validation_loss });
        if validation_loss < best.0 {
            best = (validation_loss, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let best_epoch = best.1;
    if best_epoch > 0 {
        model.params = best.2;
    }
    Ok(AeTrainResult { model, losses, best_epoch })
}

/// Autoencoder parameters with the provenance of the statistics they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: AeConfig,
    pub num_layers: usize,
    pub d_stat: usize,
    pub scaler_id: String,
    pub checkpoint_id: String,
    pub params: Vec<Tensor>,
}

impl AeCheckpoint {
    pub fn save(model: &Autoencoder, scaler_id: &str, checkpoint_id: &str, path: &Path) -> Result<String> {
        let ckpt = AeCheckpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            num_layers: model.num_layers,
            d_stat: model.d_stat,
            scaler_id: scaler_id.into(),
            checkpoint_id: checkpoint_id.into(),
            params: model.params.to_tensors(),
        };
        artifact::write_json(path, &ckpt)
    }

    /// Loads the model together with the checkpoint metadata and content id.
    pub fn load(path: &Path) -> Result<(Autoencoder, AeCheckpoint, String)> {
        let (ckpt, id): (AeCheckpoint, String) = artifact::read_json(path, "autoencoder checkpoint")?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::Version(format!("expected {FORMAT} v{VERSION}, found {} v{}", ckpt.format, ckpt.version)));
        }
        let mut model = Autoencoder::new(ckpt.config.clone(), ckpt.num_layers, ckpt.d_stat)?;
        model.params.load_tensors(&ckpt.params)?;
        Ok((model, ckpt, id))
    }
}
