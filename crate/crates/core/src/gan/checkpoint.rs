use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Discriminator, GanConfig, GanModel, Generator};
use crate::artifact;
use crate::corpus::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const FORMAT: &str = "deepstat-gan";
const VERSION: u32 = 1;

/// Self-describing container for a trained (or initial) GAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: GanConfig,
    pub vocabulary: Vocabulary,
    pub max_len: usize,
    pub seed: u64,
    pub epoch: usize,
    pub bandwidth_scale: Option<f64>,
    pub embeddings: Tensor,
    pub generator: Vec<Tensor>,
    pub discriminator: Vec<Tensor>,
}

impl GanCheckpoint {
    pub fn from_model(model: &GanModel) -> Self {
        GanCheckpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            vocabulary: model.vocab.clone(),
            max_len: model.max_len,
            seed: model.seed,
            epoch: model.epoch,
            bandwidth_scale: model.bandwidth_scale,
            embeddings: Tensor::from_array("embeddings", &model.embeddings.matrix),
            generator: model.generator.params.to_tensors(),
            discriminator: model.discriminator.params.to_tensors(),
        }
    }

    pub fn into_model(self) -> Result<GanModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Version(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let embeddings = EmbeddingMatrix { matrix: self.embeddings.to_array()? };
        let c = &self.config;
        // Parameter values are overwritten below; the rng only fixes shapes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::new(
            &mut rng,
            self.vocabulary.len(),
            c.d_e,
            c.d_h,
            c.d_z,
            if c.conditional { c.num_classes as usize } else { 0 },
            c.temperature,
        );
        generator.params.load_tensors(&self.generator)?;
        let mut discriminator = Discriminator::new(
            &mut rng,
            c.d_e,
            &c.window_sizes,
            c.n_filters,
            c.num_classes as usize,
            c.d_recon_hidden,
            c.d_z,
        );
        discriminator.params.load_tensors(&self.discriminator)?;
        Ok(GanModel {
            config: self.config,
            vocab: self.vocabulary,
            embeddings,
            max_len: self.max_len,
            seed: self.seed,
            epoch: self.epoch,
            bandwidth_scale: self.bandwidth_scale,
            generator,
            discriminator,
        })
    }

    /// Writes the checkpoint and returns its content id.
    pub fn save(model: &GanModel, path: &Path) -> Result<String> {
        artifact::write_json(path, &Self::from_model(model))
    }

    /// Loads a model and its content id.
    pub fn load(path: &Path) -> Result<(GanModel, String)> {
        let (ckpt, id): (GanCheckpoint, String) = artifact::read_json(path, "gan checkpoint")?;
        Ok((ckpt.into_model()?, id))
    }
}
