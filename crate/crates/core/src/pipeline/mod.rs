//! Stage orchestration over persisted, content-addressed artifacts.
//!
//! Every stage reads its inputs from the run directory, checks that they
//! reference each other consistently, and overwrites its outputs. Re-running a
//! stage with the same configuration reproduces identical artifacts.

mod config;
mod detect;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus::{
    build_vocabulary, embedding_lexicon, load_corpus, load_embeddings, make_semisupervised_sets, random_embeddings, split_corpus, CorpusSplit,
    Document, RawDocument, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{self, BinaryOutcomeSet, MetricsReport};
use crate::gan::{train_gan, GanCheckpoint, GanModel, LossRecord, TrainOptions};
use crate::ood::{self, AeCheckpoint, AeLossRecord, Autoencoder, CalibratedThreshold};
use crate::stats::{
    extract_stats, fit_scaler, load_stats, persist_stats, stat_width, Origin, StatsDataset, StatsManifest, StatsScaler,
    DEFAULT_EPSILON,
};

pub use config::{CorpusConfig, PipelineConfig};
pub use detect::{Detector, Verdict, VerdictKind};

const SEED_SPLIT: u64 = 1;
const SEED_LABELED: u64 = 2;
const SEED_EMBEDDINGS: u64 = 3;
const SEED_GAN: u64 = 4;
const SEED_AE: u64 = 5;

/// Fraction of the baseline training statistics held out for autoencoder early stopping.
pub const AE_HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainGan,
    ExtractStats,
    TrainAe,
    Calibrate,
    Detect,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::TrainGan, Stage::ExtractStats, Stage::TrainAe, Stage::Calibrate, Stage::Detect, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainGan => "train-gan",
            Stage::ExtractStats => "extract-stats",
            Stage::TrainAe => "train-ae",
            Stage::Calibrate => "calibrate",
            Stage::Detect => "detect",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn gan_checkpoint(&self) -> PathBuf {
        self.root.join("gan/checkpoint.json")
    }
    pub fn gan_loss_log(&self) -> PathBuf {
        self.root.join("gan/loss_log.csv")
    }
    pub fn scaler(&self) -> PathBuf {
        self.root.join("stats/scaler.json")
    }
    pub fn stats(&self, split: &str) -> PathBuf {
        self.root.join("stats").join(split)
    }
    pub fn ae_checkpoint(&self) -> PathBuf {
        self.root.join("ae/checkpoint.json")
    }
    pub fn ae_loss_log(&self) -> PathBuf {
        self.root.join("ae/loss_log.csv")
    }
    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub id: String,
    /// Id of the artifact this one was derived from.
    pub parent: Option<String>,
    pub created_unix: u64,
}

/// Index of the artifacts in a run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub seed: u64,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl PipelineManifest {
    pub fn load_or_default(layout: &Layout, seed: u64) -> Result<Self> {
        match artifact::read_json::<PipelineManifest>(&layout.manifest(), "pipeline manifest") {
            Ok((m, _)) if m.seed == seed => Ok(m),
            Ok(_) | Err(Error::MissingArtifact { .. }) => Ok(PipelineManifest { seed, artifacts: BTreeMap::new() }),
            Err(e) => Err(e),
        }
    }

    fn record(&mut self, layout: &Layout, key: &str, path: &Path, id: &str, parent: Option<&str>) {
        let rel = path.strip_prefix(&layout.root).unwrap_or(path).to_string_lossy().into_owned();
        let created_unix =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.artifacts.insert(
            key.to_string(),
            ArtifactRecord { path: rel, id: id.to_string(), parent: parent.map(str::to_string), created_unix },
        );
    }

    fn save(&self, layout: &Layout) -> Result<()> {
        artifact::write_json(&layout.manifest(), self).map(|_| ())
    }
}

/// Baseline documents and their deterministic split.
pub struct BaselineData {
    pub raw: Vec<RawDocument>,
    pub split: CorpusSplit,
}

impl BaselineData {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let raw = load_corpus(&config.corpus.path, config.corpus.format)?;
        let split = split_corpus(raw.len(), config.corpus.ratios, config.derived_seed(SEED_SPLIT))?;
        Ok(BaselineData { raw, split })
    }

    pub fn encode(&self, vocab: &Vocabulary, indices: &[usize], max_len: usize) -> Vec<Document> {
        indices.iter().map(|&i| vocab.encode_document(&self.raw[i], max_len)).collect()
    }
}

fn load_novel(config: &PipelineConfig) -> Result<Option<Vec<RawDocument>>> {
    match &config.corpus.novel_path {
        Some(p) => Ok(Some(load_corpus(p, config.corpus.novel_format)?)),
        None => Ok(None),
    }
}

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::ArtifactMismatch(message()))
    }
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let rows: Vec<String> = rows.collect();
    eval::write_loss_curve(path, header, &rows)
}

/// Trains the GAN from scratch, checkpointing and appending to the loss log after every epoch.
pub fn train_gan_stage(config: &PipelineConfig, layout: &Layout) -> Result<Vec<LossRecord>> {
    let data = BaselineData::load(config)?;
    let train_raw = CorpusSplit::select(&data.split.train, &data.raw);
    let mut vocab = build_vocabulary(&train_raw, config.corpus.min_freq, config.corpus.max_vocab);
    if let (true, Some(path)) = (config.corpus.vocabulary_from_embeddings, &config.corpus.embeddings) {
        let lexicon = embedding_lexicon(path)?;
        vocab = vocab.extended(lexicon.iter().map(String::as_str), config.corpus.max_vocab);
    }
    let max_len = config.corpus.max_len;
    let train_docs = data.encode(&vocab, &data.split.train, max_len);
    let sets = make_semisupervised_sets(
        &train_docs,
        config.gan.num_classes,
        config.corpus.labeled_fraction,
        config.derived_seed(SEED_LABELED),
    )?;
    let emb_seed = config.derived_seed(SEED_EMBEDDINGS);
    let embeddings = match &config.corpus.embeddings {
        Some(p) => load_embeddings(p, &vocab, config.gan.d_e, emb_seed)?,
        None => random_embeddings(&vocab, config.gan.d_e, emb_seed),
    };
    let mut model = GanModel::new(config.gan.clone(), vocab, embeddings, max_len, config.derived_seed(SEED_GAN))?;
    log::info!(
        "train-gan: {} labeled, {} unlabeled, vocabulary {}",
        sets.labeled.len(),
        sets.unlabeled.len(),
        model.vocab.len()
    );
    let options = TrainOptions { diagnostic_path: Some(layout.root.join("gan/nonfinite_batch.json")) };
    let ckpt_path = layout.gan_checkpoint();
    let log_path = layout.gan_loss_log();
    let mut history: Vec<LossRecord> = Vec::new();
    let mut ckpt_id = String::new();
    let records = train_gan(&mut model, &sets, &options, |m, epoch_records| {
        history.extend_from_slice(epoch_records);
        ckpt_id = GanCheckpoint::save(m, &ckpt_path)?;
        write_csv(&log_path, LossRecord::CSV_HEADER, history.iter().map(LossRecord::csv_row))
    })?;
    if config.gan.epochs == 0 {
        ckpt_id = GanCheckpoint::save(&model, &ckpt_path)?;
        write_csv(&log_path, LossRecord::CSV_HEADER, std::iter::empty())?;
    }
    let mut manifest = PipelineManifest::load_or_default(layout, config.seed)?;
    manifest.artifacts.clear();
    manifest.record(layout, "gan_checkpoint", &ckpt_path, &ckpt_id, None);
    manifest.save(layout)?;
    Ok(records)
}

/// Captures discriminator statistics for every split, fits the scaler on the
/// training split and stores scaled datasets.
pub fn extract_stats_stage(config: &PipelineConfig, layout: &Layout) -> Result<()> {
    let (model, ckpt_id) = GanCheckpoint::load(&layout.gan_checkpoint())?;
    let data = BaselineData::load(config)?;
    let specs = model.discriminator.layer_specs();
    let mut raw_sets = Vec::new();
    let mut next_id = 0u64;
    for (name, indices) in [("train", &data.split.train), ("validation", &data.split.validation), ("test", &data.split.test)] {
        let docs = data.encode(&model.vocab, indices, model.max_len);
        let seqs = extract_stats(&model, &docs, Some(Origin::Baseline), next_id)?;
        next_id += seqs.len() as u64;
        raw_sets.push((name, seqs));
    }
    if let Some(novel) = load_novel(config)? {
        let docs: Vec<Document> = novel.iter().map(|d| model.vocab.encode_document(d, model.max_len)).collect();
        raw_sets.push(("novel", extract_stats(&model, &docs, Some(Origin::Novel), next_id)?));
    }
    let scaler = fit_scaler(&raw_sets[0].1, DEFAULT_EPSILON)?;
    let scaler_id = scaler.save(&layout.scaler())?;
    let mut manifest = PipelineManifest::load_or_default(layout, config.seed)?;
    manifest.record(layout, "scaler", &layout.scaler(), &scaler_id, Some(&ckpt_id));
    for (name, seqs) in raw_sets {
        let m = StatsManifest::new(&ckpt_id, specs.clone(), name, config.seed);
        let ds = StatsDataset::new(seqs, m)?.scaled(&scaler, &scaler_id)?;
        let dir = layout.stats(name);
        persist_stats(&ds, &dir)?;
        let id = artifact::file_id(&dir.join("manifest.json"), "statistics manifest")?;
        manifest.record(layout, &format!("stats_{name}"), &dir, &id, Some(&scaler_id));
    }
    manifest.save(layout)
}

/// Loads a scaled statistics split and checks it against the current checkpoint and scaler.
fn load_checked_stats(layout: &Layout, split: &str, ckpt_id: &str, scaler_id: &str) -> Result<StatsDataset> {
    let ds = load_stats(&layout.stats(split))?;
    ds.check_provenance(ckpt_id, Some(scaler_id))?;
    Ok(ds)
}

fn current_ids(layout: &Layout) -> Result<(String, String)> {
    let ckpt_id = artifact::file_id(&layout.gan_checkpoint(), "gan checkpoint")?;
    let scaler_id = artifact::file_id(&layout.scaler(), "scaler")?;
    Ok((ckpt_id, scaler_id))
}

pub fn train_ae_stage(config: &PipelineConfig, layout: &Layout) -> Result<Vec<AeLossRecord>> {
    let (ckpt_id, scaler_id) = current_ids(layout)?;
    let train = load_checked_stats(layout, "train", &ckpt_id, &scaler_id)?;
    let n_holdout = ((train.sequences.len() as f64 * AE_HOLDOUT_FRACTION).round() as usize).max(1);
    if train.sequences.len() <= n_holdout {
        return Err(Error::InvalidInput("too few training statistics for an autoencoder holdout".into()));
    }
    let cut = train.sequences.len() - n_holdout;
    let fit = StatsDataset { sequences: train.sequences[..cut].to_vec(), manifest: train.manifest.clone() };
    let holdout = StatsDataset { sequences: train.sequences[cut..].to_vec(), manifest: train.manifest.clone() };
    let mut ae_config = config.ae.clone();
    ae_config.seed = config.derived_seed(SEED_AE);
    let result = ood::train_autoencoder(&fit, &holdout, &ae_config)?;
    log::info!("train-ae: best epoch {} of {}", result.best_epoch, result.losses.len());
    let ae_id = AeCheckpoint::save(&result.model, &scaler_id, &ckpt_id, &layout.ae_checkpoint())?;
    write_csv(&layout.ae_loss_log(), AeLossRecord::CSV_HEADER, result.losses.iter().map(AeLossRecord::csv_row))?;
    let mut manifest = PipelineManifest::load_or_default(layout, config.seed)?;
    manifest.record(layout, "ae_checkpoint", &layout.ae_checkpoint(), &ae_id, Some(&scaler_id));
    manifest.save(layout)?;
    Ok(result.losses)
}

/// Loads the autoencoder and checks it was trained on the current statistics.
pub(crate) fn load_checked_ae(layout: &Layout, ckpt_id: &str, scaler_id: &str) -> Result<(Autoencoder, String)> {
    let (ae, meta, ae_id) = AeCheckpoint::load(&layout.ae_checkpoint())?;
    ensure(meta.checkpoint_id == ckpt_id, || {
        format!("autoencoder was trained on checkpoint {}, current is {ckpt_id}", meta.checkpoint_id)
    })?;
    ensure(meta.scaler_id == scaler_id, || {
        format!("autoencoder was trained with scaler {}, current is {scaler_id}", meta.scaler_id)
    })?;
    Ok((ae, ae_id))
}

pub fn calibrate_stage(config: &PipelineConfig, layout: &Layout) -> Result<CalibratedThreshold> {
    let (ckpt_id, scaler_id) = current_ids(layout)?;
    let (ae, ae_id) = load_checked_ae(layout, &ckpt_id, &scaler_id)?;
    let validation = load_checked_stats(layout, "validation", &ckpt_id, &scaler_id)?;
    let mut threshold = ood::calibrate(&ae, &validation, config.q)?;
    threshold.autoencoder_id = ae_id.clone();
    let id = threshold.save(&layout.threshold())?;
    let mut manifest = PipelineManifest::load_or_default(layout, config.seed)?;
    manifest.record(layout, "threshold", &layout.threshold(), &id, Some(&ae_id));
    manifest.save(layout)?;
    log::info!("calibrate: tau {:.6} from {} validation errors", threshold.tau, threshold.n);
    Ok(threshold)
}

/// Loads the threshold and checks it belongs to the current autoencoder chain.
pub(crate) fn load_checked_threshold(layout: &Layout, ckpt_id: &str, scaler_id: &str, ae_id: &str) -> Result<CalibratedThreshold> {
    let (t, _) = CalibratedThreshold::load(&layout.threshold())?;
    ensure(t.checkpoint_id == ckpt_id && t.scaler_id == scaler_id && t.autoencoder_id == ae_id, || {
        format!(
            "threshold references checkpoint {}, scaler {}, autoencoder {}; current chain is {ckpt_id}, {scaler_id}, {ae_id}",
            t.checkpoint_id, t.scaler_id, t.autoencoder_id
        )
    })?;
    Ok(t)
}

/// Headline numbers written next to the metric CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub tau: f64,
    pub auc: f64,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub mean_error_baseline: f64,
    pub mean_error_novel: f64,
    pub error_ratio: f64,
    /// Held-out class accuracy of the discriminator on baseline test documents.
    pub classifier_accuracy: f64,
    pub n_baseline: usize,
    pub n_novel: usize,
}

pub fn evaluate_stage(config: &PipelineConfig, layout: &Layout) -> Result<(EvaluationSummary, MetricsReport)> {
    let (ckpt_id, scaler_id) = current_ids(layout)?;
    let (ae, ae_id) = load_checked_ae(layout, &ckpt_id, &scaler_id)?;
    let threshold = load_checked_threshold(layout, &ckpt_id, &scaler_id, &ae_id)?;
    let test = load_checked_stats(layout, "test", &ckpt_id, &scaler_id)?;
    let novel = load_checked_stats(layout, "novel", &ckpt_id, &scaler_id).map_err(|e| match e {
        Error::MissingArtifact { path, .. } => Error::MissingArtifact { name: "novel statistics (set corpus.novel_path)", path },
        other => other,
    })?;
    let baseline_scores = ae.score_all(&test.sequences)?;
    let novel_scores = ae.score_all(&novel.sequences)?;
    let outcomes = BinaryOutcomeSet::from_groups(&baseline_scores, &novel_scores)?;
    let report = eval::evaluate(&outcomes, threshold.tau)?;
    let out = layout.eval_dir();
    eval::emit_report(&report, &out)?;

    let (model, _) = GanCheckpoint::load(&layout.gan_checkpoint())?;
    let data = BaselineData::load(config)?;
    let test_docs = data.encode(&model.vocab, &data.split.test, model.max_len);
    let summary = EvaluationSummary {
        tau: threshold.tau,
        auc: report.auc,
        recall: report.recall,
        false_positive_rate: report.false_positive_rate,
        precision: report.precision,
        accuracy: report.accuracy,
        mean_error_baseline: report.mean_error_baseline,
        mean_error_novel: report.mean_error_novel,
        error_ratio: if report.mean_error_baseline > 0.0 {
            report.mean_error_novel / report.mean_error_baseline
        } else {
            f64::INFINITY
        },
        classifier_accuracy: model.accuracy(&test_docs)?,
        n_baseline: baseline_scores.len(),
        n_novel: novel_scores.len(),
    };
    let id = artifact::write_json(&out.join("summary.json"), &summary)?;
    let mut manifest = PipelineManifest::load_or_default(layout, config.seed)?;
    manifest.record(layout, "evaluation", &out.join("summary.json"), &id, Some(&threshold.autoencoder_id));
    manifest.save(layout)?;
    Ok((summary, report))
}

/// Scores each non-empty input line and writes one JSON verdict per line.
/// Returns the number of lines that could not be scored.
pub fn detect_stage(layout: &Layout, input: &mut dyn BufRead, output: &mut dyn Write) -> Result<usize> {
    let detector = Detector::load(layout)?;
    let mut failures = 0;
    for line in input.lines() {
        let line = line.map_err(|e| Error::io(Path::new("<input>"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let json = match detector.detect(&line) {
            Ok(v) => serde_json::to_string(&v)?,
            Err(e @ Error::InvalidInput(_)) => {
                failures += 1;
                serde_json::json!({ "error": e.to_string() }).to_string()
            }
            Err(e) => return Err(e),
        };
        writeln!(output, "{json}").map_err(|e| Error::io(Path::new("<output>"), e))?;
    }
    Ok(failures)
}

/// Runs a non-interactive stage. `detect` needs input and goes through [`detect_stage`].
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    match stage {
        Stage::TrainGan => train_gan_stage(config, &layout).map(|_| ()),
        Stage::ExtractStats => extract_stats_stage(config, &layout),
        Stage::TrainAe => train_ae_stage(config, &layout).map(|_| ()),
        Stage::Calibrate => calibrate_stage(config, &layout).map(|_| ()),
        Stage::Evaluate => evaluate_stage(config, &layout).map(|_| ()),
        Stage::Detect => Err(Error::Config("detect reads documents; use detect_stage".into())),
    }
}

/// Every stage except `detect`, in order.
pub fn run_all(config: &PipelineConfig) -> Result<()> {
    for stage in [Stage::TrainGan, Stage::ExtractStats, Stage::TrainAe, Stage::Calibrate, Stage::Evaluate] {
        log::info!("stage {}", stage.name());
        run_stage(stage, config)?;
    }
    Ok(())
}

/// Layer count and width the autoencoder must match for a checkpoint.
pub(crate) fn expected_stat_shape(model: &GanModel) -> (usize, usize) {
    let specs = model.discriminator.layer_specs();
    (specs.len(), stat_width(&specs))
}

pub(crate) fn load_scaler_checked(layout: &Layout, ckpt_id: &str) -> Result<(StatsScaler, String)> {
    let (scaler, id) = StatsScaler::load(&layout.scaler())?;
    let train_manifest = layout.stats("train").join("manifest.json");
    let (m, _): (StatsManifest, _) = artifact::read_json(&train_manifest, "statistics manifest")?;
    ensure(m.source_checkpoint_id == ckpt_id && m.scaler_id.as_deref() == Some(id.as_str()), || {
        format!("scaler {id} was not fitted on statistics of checkpoint {ckpt_id}")
    })?;
    Ok((scaler, id))
}
