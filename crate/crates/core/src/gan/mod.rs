//! Semi-supervised text GAN: soft-argmax LSTM generator and convolutional
//! discriminator with a K+1 class head and a latent reconstruction head.

mod checkpoint;
mod discriminator;
mod generator;
pub mod losses;
mod train;

pub use checkpoint::GanCheckpoint;
pub use discriminator::{Discriminator, DiscriminatorOutput, Forward, LayerSpec};
pub use generator::{soft_argmax, GeneratedSequence, Generator, Rollout, SoftArgmax};
pub use losses::GanLossBreakdown;
pub use train::{train_gan, GanModel, LossRecord, TrainOptions};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// K+1-class semi-supervised discriminator objective.
    #[default]
    Semisup,
    /// Binary real/fake objective (the synthetic class against the rest).
    Textgan,
}

/// Architecture and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    #[serde(rename = "K")]
    pub num_classes: u32,
    pub d_z: usize,
    pub d_e: usize,
    pub d_h: usize,
    pub window_sizes: Vec<usize>,
    pub n_filters: usize,
    /// Width of the tanh layer feeding the latent reconstruction head.
    pub d_recon_hidden: usize,
    pub lambda_r: f64,
    pub lambda_m: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Discriminator updates per generator update.
    pub n_d: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub objective: Objective,
    /// Append a one-hot class condition to the latent code.
    pub conditional: bool,
    /// Relative kernel bandwidths, scaled by the median feature distance.
    pub bandwidths: Vec<f64>,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            num_classes: 2,
            d_z: 100,
            d_e: 300,
            d_h: 300,
            window_sizes: vec![3, 4, 5],
            n_filters: 100,
            d_recon_hidden: 100,
            lambda_r: 1.0,
            lambda_m: 1.0,
            temperature: 100.0,
            epochs: 10,
            batch_size: 32,
            n_d: 1,
            learning_rate: 1e-4,
            clip_norm: Some(5.0),
            objective: Objective::Semisup,
            conditional: false,
            bandwidths: losses::DEFAULT_BANDWIDTHS.to_vec(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if self.num_classes == 0 {
            return bad("K must be at least 1");
        }
        if self.window_sizes.is_empty() || self.window_sizes.contains(&0) {
            return bad("window_sizes must be nonempty and positive");
        }
        if self.n_filters == 0 || self.d_z == 0 || self.d_e == 0 || self.d_h == 0 || self.d_recon_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.batch_size == 0 || self.n_d == 0 {
            return bad("batch_size and n_d must be positive");
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return bad("temperature and learning_rate must be positive");
        }
        if self.lambda_r < 0.0 || self.lambda_m < 0.0 {
            return bad("lambda_r and lambda_m must be non-negative");
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|b| !(*b > 0.0)) {
            return bad("bandwidths must be positive");
        }
        Ok(())
    }
}
