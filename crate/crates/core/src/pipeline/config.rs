use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFormat, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::ood::{AeConfig, DEFAULT_QUANTILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_baseline_format")]
    pub format: CorpusFormat,
    /// Documents from another distribution, used only by `evaluate`.
    #[serde(default)]
    pub novel_path: Option<PathBuf>,
    #[serde(default = "default_novel_format")]
    pub novel_format: CorpusFormat,
    /// Pretrained vectors (`token v1 … v_d` per line); random when absent.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Also admit embedding-file tokens into the vocabulary (after training
    /// tokens, up to `max_vocab`), so words unseen in training keep their
    /// pretrained vectors instead of collapsing to UNK.
    #[serde(default)]
    pub vocabulary_from_embeddings: bool,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    /// Train, validation and test fractions.
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default = "default_labeled_fraction")]
    pub labeled_fraction: f64,
}

fn default_baseline_format() -> CorpusFormat {
    CorpusFormat::LabeledTsv
}
fn default_novel_format() -> CorpusFormat {
    CorpusFormat::OneDocPerLine
}
fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}
fn default_min_freq() -> usize {
    1
}
fn default_max_vocab() -> usize {
    50_000
}
fn default_ratios() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}
fn default_labeled_fraction() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    42
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}
fn default_q() -> f64 {
    DEFAULT_QUANTILE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Calibration quantile of baseline validation errors.
    #[serde(default = "default_q")]
    pub q: f64,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub ae: AeConfig,
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut config.out_dir);
        resolve(&mut config.corpus.path);
        config.corpus.novel_path.as_mut().map(resolve);
        config.corpus.embeddings.as_mut().map(resolve);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.ae.validate()?;
        let c = &self.corpus;
        if c.vocabulary_from_embeddings && c.embeddings.is_none() {
            return Err(Error::Config("corpus.vocabulary_from_embeddings requires corpus.embeddings".into()));
        }
        if c.max_len < 2 {
            return Err(Error::Config("corpus.max_len must be at least 2".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("q = {} is outside (0, 1)", self.q)));
        }
        if !(c.labeled_fraction > 0.0 && c.labeled_fraction <= 1.0) {
            return Err(Error::Config("corpus.labeled_fraction must be in (0, 1]".into()));
        }
        if c.ratios.iter().any(|r| !(*r > 0.0)) || (c.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("corpus.ratios must be positive and sum to 1".into()));
        }
        Ok(())
    }

    /// Independent stream seed for one pipeline component.
    pub fn derived_seed(&self, component: u64) -> u64 {
        self.seed ^ component.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = PipelineConfig::from_toml("[corpus]\npath = \"a.tsv\"\n", Path::new("/base")).unwrap();
        assert_eq!(c.corpus.path, PathBuf::from("/base/a.tsv"));
        assert_eq!(c.out_dir, PathBuf::from("/base/run"));
        assert_eq!(c.q, 0.95);
        assert_eq!(c.gan, GanConfig::default());
        assert_eq!(c.ae.d_ae, 64);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
seed = 3
q = 0.9
[corpus]
path = "/abs/a.tsv"
novel_path = "b.txt"
max_len = 20
[gan]
K = 4
d_e = 16
objective = "textgan"
[ae]
d_ae = 8
activation = "relu"
"#;
        let c = PipelineConfig::from_toml(text, Path::new("cfg")).unwrap();
        assert_eq!(c.corpus.path, PathBuf::from("/abs/a.tsv"));
        assert_eq!(c.corpus.novel_path, Some(PathBuf::from("cfg/b.txt")));
        assert_eq!(c.gan.num_classes, 4);
        assert_eq!(c.ae.activation, crate::nn::Activation::Relu);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[corpus]\npath = \"a\"\nratios = [0.5, 0.5, 0.5]\n",
            "q = 1.0\n[corpus]\npath = \"a\"\n",
            "[corpus]\npath = \"a\"\nbogus = 1\n",
            "[corpus]\npath = \"a\"\n[gan]\nd_e = 0\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml(text, Path::new(".")), Err(Error::Config(_))), "{text}");
        }
    }
}
