use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_baseline, Autoencoder};
use crate::artifact;
use crate::error::{Error, Result};
use crate::stats::{LayerStatSequence, StatsDataset};

pub const DEFAULT_QUANTILE: f64 = 0.95;

/// Reconstruction-error limit learned from baseline validation errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub tau: f64,
    pub q: f64,
    pub n: usize,
    pub scaler_id: String,
    pub checkpoint_id: String,
    /// Content id of the autoencoder that produced the calibration errors.
    #[serde(default)]
    pub autoencoder_id: String,
}

/// Empirical `q`-quantile of `errors`, interpolating linearly between order
/// statistics at position `q·(n−1)`.
pub fn calibrate_threshold(errors: &[f64], q: f64) -> Result<CalibratedThreshold> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("cannot calibrate a threshold on no errors".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!("quantile {q} is outside (0, 1)")));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("calibration errors contain a non-finite value".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let tau = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
    Ok(CalibratedThreshold { tau: tau.max(0.0), q, n: sorted.len(), scaler_id: String::new(), checkpoint_id: String::new(), autoencoder_id: String::new() })
}

/// Scores a baseline validation dataset and calibrates on its errors.
pub fn calibrate(model: &Autoencoder, validation: &StatsDataset, q: f64) -> Result<CalibratedThreshold> {
    ensure_baseline(validation, "threshold calibration")?;
    let errors = model.score_all(&validation.sequences)?;
    let mut t = calibrate_threshold(&errors, q)?;
    t.scaler_id = validation.manifest.scaler_id.clone().unwrap_or_default();
    t.checkpoint_id = validation.manifest.source_checkpoint_id.clone();
    Ok(t)
}

impl CalibratedThreshold {
    pub fn is_anomalous(&self, error: f64) -> bool {
        error > self.tau
    }

    pub fn report(&self, seq: &LayerStatSequence, error: f64) -> ReconstructionReport {
        ReconstructionReport { sample_id: seq.sample_id, error, is_above_threshold: self.is_anomalous(error) }
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        artifact::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        artifact::read_json(path, "threshold")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub sample_id: u64,
    pub error: f64,
    pub is_above_threshold: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolated_quantile() {
        let errors: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = calibrate_threshold(&errors, 0.95).unwrap();
        assert!(t.tau > 9.0 && t.tau < 10.0);
        assert!((t.tau - 9.55).abs() < 1e-12);
        assert_eq!(t.n, 10);
        let t = calibrate_threshold(&errors, 1.0 - 1e-15).unwrap();
        assert!((t.tau - 10.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
        assert!(calibrate_threshold(&[1.0, f64::NAN], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn exceedance_bounded(errors in proptest::collection::vec(0.0f64..100.0, 1..200), q in 0.01f64..0.99) {
            let t = calibrate_threshold(&errors, q).unwrap();
            let above = errors.iter().filter(|&&e| t.is_anomalous(e)).count() as f64;
            prop_assert!(above / errors.len() as f64 <= (1.0 - q) + 1.0 / errors.len() as f64 + 1e-12);
        }

        #[test]
        fn raising_tau_never_flags_more(errors in proptest::collection::vec(0.0f64..10.0, 1..100), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let count = |tau: f64| errors.iter().filter(|&&e| e > tau).count();
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
