//! Synthetic corpora over two disjoint vocabulary halves.
//!
//! Baseline documents use tokens `a0 … a{n−1}`; each of the K classes favours
//! its own contiguous block of that half. Novel documents use `b0 … b{n−1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::path::{Path, PathBuf};

use crate::corpus::RawDocument;
use crate::error::{Error, Result};

/// Desk-scale configuration for the files written by [`write_demo`].
pub const DEMO_CONFIG: &str = r#"seed = 7
out_dir = "run"

[corpus]
path = "baseline.tsv"
novel_path = "novel.txt"
max_len = 20

[gan]
d_z = 16
d_e = 32
d_h = 64
n_filters = 32
d_recon_hidden = 32
learning_rate = 1e-3
epochs = 30

[ae]
d_ae = 32
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Tokens per vocabulary half.
    pub half_vocab: usize,
    pub num_classes: u32,
    pub baseline_docs: usize,
    pub novel_docs: usize,
    pub min_tokens: usize,
    /// Longest document in tokens, EOS excluded.
    pub max_tokens: usize,
    /// Probability that a baseline token comes from its class block.
    pub class_focus: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            half_vocab: 100,
            num_classes: 2,
            baseline_docs: 2000,
            novel_docs: 2000,
            min_tokens: 5,
            max_tokens: 19,
            class_focus: 0.8,
            seed: 17,
        }
    }
}

fn sample_doc<R: Rng>(rng: &mut R, spec: &SyntheticSpec, prefix: &str, block: Option<(usize, usize)>) -> String {
    let len = rng.random_range(spec.min_tokens..=spec.max_tokens);
    (0..len)
        .map(|_| {
            let id = match block {
                Some((lo, hi)) if rng.random_bool(spec.class_focus) => rng.random_range(lo..hi),
                _ => rng.random_range(0..spec.half_vocab),
            };
            format!("{prefix}{id}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Labeled baseline documents, classes assigned round-robin.
pub fn baseline_corpus(spec: &SyntheticSpec) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_classes.max(1) as usize;
    let block = (spec.half_vocab / k).max(1);
    (0..spec.baseline_docs)
        .map(|i| {
            let class = i % k;
            let range = (class * block, ((class + 1) * block).min(spec.half_vocab));
            RawDocument { text: sample_doc(&mut rng, spec, "a", Some(range)), label: Some(class as u32 + 1) }
        })
        .collect()
}

/// Unlabeled documents drawn uniformly from the other vocabulary half.
pub fn novel_corpus(spec: &SyntheticSpec) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    (0..spec.novel_docs)
        .map(|_| RawDocument { text: sample_doc(&mut rng, spec, "b", None), label: None })
        .collect()
}

/// An embedding file covering both vocabulary halves with seeded uniform
/// vectors, standing in for pretrained vectors of the whole language.
pub fn lexicon_embeddings(spec: &SyntheticSpec, d_e: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for prefix in ["a", "b"] {
        for i in 0..spec.half_vocab {
            out.push_str(&format!("{prefix}{i}"));
            for _ in 0..d_e {
                out.push_str(&format!(" {:.6}", rng.random_range(-0.25..0.25)));
            }
            out.push('\n');
        }
    }
    out
}

/// Corpus lines in the `label<TAB>text` or plain format.
pub fn to_lines(docs: &[RawDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        if let Some(l) = d.label {
            out.push_str(&format!("{l}\t"));
        }
        out.push_str(&d.text);
        out.push('\n');
    }
    out
}

/// Writes `baseline.tsv`, `novel.txt` and `config.toml` into `dir` and
/// returns the configuration path.
pub fn write_demo(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("baseline.tsv", to_lines(&baseline_corpus(spec)))?;
    write("novel.txt", to_lines(&novel_corpus(spec)))?;
    write("config.toml", DEMO_CONFIG.to_string())?;
    Ok(dir.join("config.toml"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn halves_are_disjoint_and_lengths_bounded() {
        let spec = SyntheticSpec { baseline_docs: 50, novel_docs: 50, ..Default::default() };
        let a = baseline_corpus(&spec);
        let b = novel_corpus(&spec);
        assert!(a.iter().all(|d| tokenize(&d.text).iter().all(|t| t.starts_with('a'))));
        assert!(b.iter().all(|d| tokenize(&d.text).iter().all(|t| t.starts_with('b'))));
        assert!(a.iter().chain(&b).all(|d| {
            let n = tokenize(&d.text).len();
            (spec.min_tokens..=spec.max_tokens).contains(&n)
        }));
        assert_eq!(a.iter().filter(|d| d.label == Some(2)).count(), 25);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec { baseline_docs: 10, novel_docs: 10, ..Default::default() };
        assert_eq!(baseline_corpus(&spec), baseline_corpus(&spec));
        assert_eq!(novel_corpus(&spec), novel_corpus(&spec));
    }
}
