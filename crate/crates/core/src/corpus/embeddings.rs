use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};

const OOV_RANGE: f64 = 0.25;

/// Word embedding table, one row per vocabulary id. The PAD row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Stacked embedding rows for `ids`.
    pub fn lookup(&self, ids: &[u32]) -> Array2<f64> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.matrix.select(Axis(0), &idx)
    }
}

/// Every row drawn from uniform(−0.25, 0.25) in id order; PAD zeroed.
pub fn random_embeddings(vocab: &Vocabulary, d_e: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = Array2::from_shape_simple_fn((vocab.len(), d_e), || rng.random_range(-OOV_RANGE..OOV_RANGE));
    matrix.row_mut(PAD as usize).fill(0.0);
    EmbeddingMatrix { matrix }
}

/// Tokens of an embedding file, in file order.
pub fn embedding_lexicon(path: &Path) -> Result<Vec<String>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content.lines().filter_map(|l| l.split_whitespace().next()).map(str::to_string).collect())
}

/// Loads pretrained vectors (`token v1 … v_d` per line). Vocabulary tokens
/// absent from the file keep their seeded uniform initialization.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, d_e: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut emb = random_embeddings(vocab, d_e, seed);
    let mut seen = vec![false; vocab.len()];
    for (i, line) in content.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|_| parse_err(format!("`{p}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != d_e {
            return Err(parse_err(format!("dimension mismatch: expected {d_e}, found {}", values.len())));
        }
        if let Some(id) = vocab.id(token) {
            let id = id as usize;
            if !seen[id] {
                seen[id] = true;
                emb.matrix.row_mut(id).assign(&ndarray::Array1::from(values));
            }
        }
    }
    emb.matrix.row_mut(PAD as usize).fill(0.0);
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, RawDocument};
    use std::io::Write;

    fn vocab() -> Vocabulary {
        build_vocabulary(&[RawDocument { text: "cat dog bird".into(), label: None }], 1, 100)
    }

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn copies_file_rows_and_zeroes_pad() {
        let v = vocab();
        let f = file("cat 0.1 -0.2 0.30000000000000004\n<pad> 1 1 1\nzebra 9 9 9\n");
        let emb = load_embeddings(f.path(), &v, 3, 7).unwrap();
        let cat = emb.matrix.row(v.id("cat").unwrap() as usize).to_vec();
        assert_eq!(cat, vec![0.1, -0.2, 0.30000000000000004]);
        assert!(emb.matrix.row(PAD as usize).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn oov_rows_are_bounded_and_reproducible() {
        let v = vocab();
        let f = file("cat 1 2 3\n");
        let a = load_embeddings(f.path(), &v, 3, 11).unwrap();
        let b = load_embeddings(f.path(), &v, 3, 11).unwrap();
        let dog = v.id("dog").unwrap() as usize;
        assert!(a.matrix.row(dog).iter().all(|x| x.abs() <= 0.25));
        assert_eq!(a.matrix.row(dog).to_vec(), b.matrix.row(dog).to_vec());
        let c = load_embeddings(f.path(), &v, 3, 12).unwrap();
        assert_ne!(a.matrix.row(dog).to_vec(), c.matrix.row(dog).to_vec());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let f = file("cat 1 2\n");
        assert!(matches!(load_embeddings(f.path(), &vocab(), 3, 0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unparseable_value_is_error() {
        let f = file("cat 1 x 3\n");
        assert!(load_embeddings(f.path(), &vocab(), 3, 0).is_err());
    }
}
