use serde::{Deserialize, Serialize};

use super::{expected_stat_shape, load_checked_ae, load_checked_threshold, load_scaler_checked, ensure, Layout};
use crate::corpus::{tokenize, Document};
use crate::error::{Error, Result};
use crate::gan::{GanCheckpoint, GanModel};
use crate::ood::{Autoencoder, CalibratedThreshold};
use crate::stats::{apply_scaler, extract_stats, StatsScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    Anomalous,
    InDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
}

/// A loaded, mutually consistent artifact chain.
pub struct Detector {
    pub model: GanModel,
    pub scaler: StatsScaler,
    pub autoencoder: Autoencoder,
    pub threshold: CalibratedThreshold,
}

impl Detector {
    pub fn load(layout: &Layout) -> Result<Self> {
        let (model, ckpt_id) = GanCheckpoint::load(&layout.gan_checkpoint())?;
        let (scaler, scaler_id) = load_scaler_checked(layout, &ckpt_id)?;
        let (autoencoder, ae_id) = load_checked_ae(layout, &ckpt_id, &scaler_id)?;
        let threshold = load_checked_threshold(layout, &ckpt_id, &scaler_id, &ae_id)?;
        let (layers, width) = expected_stat_shape(&model);
        ensure(autoencoder.num_layers == layers && autoencoder.d_stat == width, || {
            format!(
                "autoencoder expects {}×{} statistics, checkpoint produces {layers}×{width}",
                autoencoder.num_layers, autoencoder.d_stat
            )
        })?;
        ensure(scaler.mean.dim() == (layers, width), || "scaler shape does not match the checkpoint".into())?;
        Ok(Detector { model, scaler, autoencoder, threshold })
    }

    /// Scores one document; in-distribution documents are also classified.
    pub fn detect(&self, text: &str) -> Result<Verdict> {
        if tokenize(text).is_empty() {
            return Err(Error::InvalidInput("document is empty after tokenization".into()));
        }
        let doc = Document { tokens: self.model.vocab.encode(text, self.model.max_len), label: None };
        let seq = extract_stats(&self.model, &[doc], None, 0)?.remove(0);
        let softmax = seq.last_layer();
        let score = self.autoencoder.score(&apply_scaler(&self.scaler, &seq)?)?;
        if !score.is_finite() {
            return Err(Error::NonFinite("reconstruction error".into()));
        }
        if self.threshold.is_anomalous(score) {
            return Ok(Verdict { kind: VerdictKind::Anomalous, score, class_id: None, class_probs: None });
        }
        let k = self.model.config.num_classes as usize;
        let real = &softmax[..k];
        let total: f64 = real.iter().sum();
        let probs: Vec<f64> = real.iter().map(|p| p / total).collect();
        let best = probs.iter().enumerate().fold(0, |b, (i, p)| if *p > probs[b] { i } else { b });
        Ok(Verdict { kind: VerdictKind::InDistribution, score, class_id: Some(best as u32 + 1), class_probs: Some(probs) })
    }
}
