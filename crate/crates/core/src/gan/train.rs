use std::path::PathBuf;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::generator::argmax;
use super::losses::{self, GanLossBreakdown};
use super::{Discriminator, DiscriminatorOutput, GanConfig, Generator, Objective};
use crate::autodiff::{concat_rows, Tape, Var};
use crate::corpus::{Batch, Document, EmbeddingMatrix, SemiSupervisedSets, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::Adam;

/// Generator, discriminator and the frozen inputs they share.
#[derive(Debug, Clone)]
pub struct GanModel {
    pub config: GanConfig,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub max_len: usize,
    pub seed: u64,
    pub epoch: usize,
    /// Median pairwise feature distance of the first real batch; set on the
    /// first discriminator step and frozen afterwards.
    pub bandwidth_scale: Option<f64>,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// One row of the training loss log. The discriminator ascends `l_d`
/// (implemented as descent on `−l_d`); the generator descends `l_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_dssl: f64,
    pub l_recon: f64,
    pub l_mmd2: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub labeled_accuracy: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,l_dssl,l_recon,l_mmd2,l_d,l_g,labeled_accuracy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.step, self.l_dssl, self.l_recon, self.l_mmd2, self.l_d, self.l_g, self.labeled_accuracy
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to dump the offending batch if a loss becomes non-finite.
    pub diagnostic_path: Option<PathBuf>,
}

impl GanModel {
    pub fn new(
        config: GanConfig,
        vocab: Vocabulary,
        embeddings: EmbeddingMatrix,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.vocab_size() != vocab.len() || embeddings.dim() != config.d_e {
            return Err(Error::Config(format!(
                "embedding matrix {}×{} does not match vocabulary {} × d_e {}",
                embeddings.vocab_size(),
                embeddings.dim(),
                vocab.len(),
                config.d_e
            )));
        }
        if max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.num_classes as usize;
        let discriminator = Discriminator::new(
            &mut rng,
            config.d_e,
            &config.window_sizes,
            config.n_filters,
            k,
            config.d_recon_hidden,
            config.d_z,
        );
        let generator = Generator::new(
            &mut rng,
            vocab.len(),
            config.d_e,
            config.d_h,
            config.d_z,
            if config.conditional { k } else { 0 },
            config.temperature,
        );
        Ok(GanModel { config, vocab, embeddings, max_len, seed, epoch: 0, bandwidth_scale: None, generator, discriminator })
    }

    /// Absolute kernel bandwidths (relative bandwidths × frozen scale).
    pub fn bandwidths(&self) -> Vec<f64> {
        let scale = self.bandwidth_scale.unwrap_or(1.0);
        self.config.bandwidths.iter().map(|b| b * scale).collect()
    }

    /// `(batch·max_len)×d_e` embedding rows for a padded batch.
    pub fn embed_batch(&self, batch: &Batch) -> Array2<f64> {
        self.embeddings.lookup(&batch.flat_ids())
    }

    /// Inference over documents in chunks of the training batch size.
    pub fn discriminate_documents(&self, docs: &[Document], capture_stats: bool) -> Result<Vec<DiscriminatorOutput>> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(self.config.batch_size.max(1)) {
            let batch = Batch::from_documents(chunk, self.max_len);
            let emb = self.embed_batch(&batch);
            out.extend(self.discriminator.discriminate_batch(&emb, chunk.len(), self.max_len, capture_stats)?);
        }
        Ok(out)
    }

    /// Predicted class in 1..=K (synthetic class excluded).
    pub fn classify(&self, docs: &[Document]) -> Result<Vec<u32>> {
        let k = self.config.num_classes as usize;
        Ok(self
            .discriminate_documents(docs, false)?
            .iter()
            .map(|o| argmax(&o.class_logits[..k]) as u32 + 1)
            .collect())
    }

    /// Fraction of labeled documents whose predicted class matches.
    pub fn accuracy(&self, docs: &[Document]) -> Result<f64> {
        let labeled: Vec<Document> = docs.iter().filter(|d| d.label.is_some()).cloned().collect();
        if labeled.is_empty() {
            return Ok(0.0);
        }
        let pred = self.classify(&labeled)?;
        let correct = pred.iter().zip(&labeled).filter(|(p, d)| Some(**p) == d.label).count();
        Ok(correct as f64 / labeled.len() as f64)
    }

    fn sample_latent<R: Rng>(&self, rng: &mut R, n: usize) -> (Array2<f64>, Array2<f64>) {
        let d_z = self.config.d_z;
        let width = self.generator.input_dim();
        let mut latent = Array2::zeros((n, width));
        for r in 0..n {
            for c in 0..d_z {
                latent[[r, c]] = rng.sample(StandardNormal);
            }
            if width > d_z {
                let class = rng.random_range(0..width - d_z);
                latent[[r, d_z + class]] = 1.0;
            }
        }
        let z = latent.slice(s![.., ..d_z]).to_owned();
        (latent, z)
    }
}

fn rows<'t>(v: Var<'t>, start: usize, len: usize) -> Var<'t> {
    v.gather_rows((start..start + len).collect())
}

fn class_accuracy(logits: &Array2<f64>, labels: &[u32], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.as_slice().expect("contiguous")[..k]) as u32 + 1 == y)
        .count();
    correct as f64 / labels.len() as f64
}

struct StepContext<'a> {
    labeled: &'a Batch,
    unlabeled: &'a Batch,
}

/// One discriminator update; returns the loss parts (without `l_g`) and the
/// labeled-batch accuracy.
fn discriminator_step(
    model: &mut GanModel,
    opt: &mut Adam,
    ctx: &StepContext<'_>,
    rng: &mut ChaCha8Rng,
) -> (GanLossBreakdown, f64) {
    let cfg = model.config.clone();
    let t = model.max_len;
    let k = cfg.num_classes as usize;
    let (n_l, n_u) = (ctx.labeled.len(), ctx.unlabeled.len());
    let (latent, z) = model.sample_latent(rng, n_u);

    let tape = Tape::new();
    let pd = model.discriminator.params.bind(&tape);
    let pg = model.generator.params.bind_frozen(&tape);
    let emb = tape.constant(model.embeddings.matrix.clone());
    let fake = model.generator.rollout(&pg, tape.constant(latent), emb, t);
    let x = concat_rows(&[
        tape.constant(model.embed_batch(ctx.labeled)),
        tape.constant(model.embed_batch(ctx.unlabeled)),
        fake.soft_rows,
    ]);
    let fwd = model.discriminator.forward(&pd, x, n_l + n_u + n_u, t);
    let logits_l = rows(fwd.logits, 0, n_l);
    let logits_u = rows(fwd.logits, n_l, n_u);
    let logits_f = rows(fwd.logits, n_l + n_u, n_u);
    let feat_u = rows(fwd.feature, n_l, n_u);
    let feat_f = rows(fwd.feature, n_l + n_u, n_u);
    let z_hat_f = rows(fwd.z_hat, n_l + n_u, n_u);

    if model.bandwidth_scale.is_none() {
        model.bandwidth_scale = Some(losses::median_pairwise_distance(&feat_u.value()));
    }
    let bw = model.bandwidths();

    let labels: Vec<u32> = ctx.labeled.labels.iter().map(|l| l.expect("labeled batch")).collect();
    let l_main = match cfg.objective {
        Objective::Semisup => losses::loss_dssl_var(logits_l, &labels, logits_u, logits_f),
        Objective::Textgan => {
            let p_fake_u = logits_u.softmax_rows().slice_cols(k, k + 1);
            let p_fake_f = logits_f.softmax_rows().slice_cols(k, k + 1);
            losses::loss_gan_standard_var(p_fake_u.neg().offset(1.0), p_fake_f.neg().offset(1.0))
        }
    };
    let l_recon = losses::loss_recon_var(tape.constant(z), z_hat_f);
    let l_mmd2 = losses::mmd2_var(feat_u, feat_f, &bw);
    let l_d = losses::loss_discriminator_var(l_main, l_recon, l_mmd2, cfg.lambda_r, cfg.lambda_m);

    let grads = pd.gradients(&tape.backward(l_d.neg()));
    opt.step(&mut model.discriminator.params, &grads);

    let parts = GanLossBreakdown {
        l_dssl: l_main.scalar(),
        l_recon: l_recon.scalar(),
        l_mmd2: l_mmd2.scalar(),
        l_d: l_d.scalar(),
        l_g: f64::NAN,
        lambda_r: cfg.lambda_r,
        lambda_m: cfg.lambda_m,
    };
    (parts, class_accuracy(&logits_l.value(), &labels, k))
}

/// One generator update on the feature-matching MMD; returns `l_g`.
fn generator_step(model: &mut GanModel, opt: &mut Adam, unlabeled: &Batch, rng: &mut ChaCha8Rng) -> f64 {
    let t = model.max_len;
    let n_u = unlabeled.len();
    let (latent, _) = model.sample_latent(rng, n_u);
    let bw = model.bandwidths();

    let tape = Tape::new();
    let pd = model.discriminator.params.bind_frozen(&tape);
    let pg = model.generator.params.bind(&tape);
    let emb = tape.constant(model.embeddings.matrix.clone());
    let fake = model.generator.rollout(&pg, tape.constant(latent), emb, t);
    let x = concat_rows(&[tape.constant(model.embed_batch(unlabeled)), fake.soft_rows]);
    let fwd = model.discriminator.forward(&pd, x, 2 * n_u, t);
    let l_g = losses::mmd2_var(rows(fwd.feature, 0, n_u), rows(fwd.feature, n_u, n_u), &bw);
    let grads = pg.gradients(&tape.backward(l_g));
    opt.step(&mut model.generator.params, &grads);
    l_g.scalar()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn dump_batch(path: &Option<PathBuf>, record: &LossRecord, ctx: &StepContext<'_>) -> String {
    #[derive(Serialize)]
    struct Dump<'a> {
        record: &'a LossRecord,
        labeled_ids: Vec<Vec<u32>>,
        unlabeled_ids: Vec<Vec<u32>>,
    }
    let to_rows = |b: &Batch| b.ids.rows().into_iter().map(|r| r.to_vec()).collect();
    let dump = Dump { record, labeled_ids: to_rows(ctx.labeled), unlabeled_ids: to_rows(ctx.unlabeled) };
    match path {
        Some(p) => match crate::artifact::write_json(p, &dump) {
            Ok(_) => format!("; batch dumped to {}", p.display()),
            Err(e) => format!("; failed to dump batch: {e}"),
        },
        None => String::new(),
    }
}

/// Alternating training: `n_d` discriminator steps, then one generator step,
/// per batch of unlabeled documents. `on_epoch` runs after every epoch with
/// that epoch's records (checkpointing and log persistence live there).
pub fn train_gan(
    model: &mut GanModel,
    data: &SemiSupervisedSets,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&GanModel, &[LossRecord]) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    let cfg = model.config.clone();
    if data.labeled.is_empty() {
        return Err(Error::InvalidInput("no labeled training documents".into()));
    }
    let unlabeled: Vec<Document> = if data.unlabeled.is_empty() {
        data.labeled.iter().map(|d| Document { tokens: d.tokens.clone(), label: None }).collect()
    } else {
        data.unlabeled.clone()
    };
    let mut opt_d = Adam::new(&model.discriminator.params, cfg.learning_rate).with_clip_norm(cfg.clip_norm);
    let mut opt_g = Adam::new(&model.generator.params, cfg.learning_rate).with_clip_norm(cfg.clip_norm);
    let mut log = Vec::new();

    for _ in 0..cfg.epochs {
        let epoch = model.epoch + 1;
        let mut rng = epoch_rng(model.seed, epoch);
        let mut u_order: Vec<usize> = (0..unlabeled.len()).collect();
        u_order.shuffle(&mut rng);
        let mut l_order: Vec<usize> = (0..data.labeled.len()).collect();
        l_order.shuffle(&mut rng);
        let mut l_pos = 0;
        let mut epoch_log = Vec::new();

        for (step, chunk) in u_order.chunks(cfg.batch_size).enumerate() {
            let u_docs: Vec<Document> = chunk.iter().map(|&i| unlabeled[i].clone()).collect();
            let unlabeled_batch = Batch::from_documents(&u_docs, model.max_len);
            let mut parts = None;
            let mut last_labeled = None;
            for _ in 0..cfg.n_d {
                let n_l = cfg.batch_size.min(data.labeled.len());
                let l_docs: Vec<Document> =
                    (0..n_l).map(|j| data.labeled[l_order[(l_pos + j) % l_order.len()]].clone()).collect();
                l_pos = (l_pos + n_l) % l_order.len();
                let labeled_batch = Batch::from_documents(&l_docs, model.max_len);
                let ctx = StepContext { labeled: &labeled_batch, unlabeled: &unlabeled_batch };
                parts = Some(discriminator_step(model, &mut opt_d, &ctx, &mut rng));
                last_labeled = Some(labeled_batch);
            }
            let (mut parts, accuracy) = parts.expect("n_d ≥ 1");
            parts.l_g = generator_step(model, &mut opt_g, &unlabeled_batch, &mut rng);
            let record = LossRecord {
                epoch,
                step,
                l_dssl: parts.l_dssl,
                l_recon: parts.l_recon,
                l_mmd2: parts.l_mmd2,
                l_d: parts.l_d,
                l_g: parts.l_g,
                labeled_accuracy: accuracy,
            };
            if [record.l_dssl, record.l_recon, record.l_mmd2, record.l_d, record.l_g].iter().any(|v| !v.is_finite()) {
                let labeled = last_labeled.expect("n_d ≥ 1");
                let ctx = StepContext { labeled: &labeled, unlabeled: &unlabeled_batch };
                let note = dump_batch(&options.diagnostic_path, &record, &ctx);
                return Err(Error::NonFinite(format!("GAN loss at epoch {epoch} step {step}: {record:?}{note}")));
            }
            epoch_log.push(record);
        }
        model.epoch = epoch;
        log::info!(
            "gan epoch {epoch}: l_d {:.4} l_g {:.4} acc {:.3}",
            epoch_log.last().map_or(f64::NAN, |r| r.l_d),
            epoch_log.last().map_or(f64::NAN, |r| r.l_g),
            epoch_log.iter().map(|r| r.labeled_accuracy).sum::<f64>() / epoch_log.len().max(1) as f64
        );
        on_epoch(model, &epoch_log)?;
        log.extend(epoch_log);
    }
    Ok(log)
}
