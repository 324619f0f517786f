use ndarray::Array2;

use super::{Document, EOS, PAD};

/// Right-padded id matrix for a run of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `batch × max_len`, PAD after each sequence.
    pub ids: Array2<u32>,
    /// Unpadded lengths, EOS included.
    pub lengths: Vec<usize>,
    pub labels: Vec<Option<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Flattened ids, sample-major.
    pub fn flat_ids(&self) -> Vec<u32> {
        self.ids.iter().copied().collect()
    }

    pub fn from_documents(docs: &[Document], max_len: usize) -> Self {
        let max_len = max_len.max(1);
        let mut ids = Array2::from_elem((docs.len(), max_len), PAD);
        let mut lengths = Vec::with_capacity(docs.len());
        for (r, doc) in docs.iter().enumerate() {
            let seq = fit_length(&doc.tokens, max_len);
            for (c, &id) in seq.iter().enumerate() {
                ids[[r, c]] = id;
            }
            lengths.push(seq.len());
        }
        Batch { ids, lengths, labels: docs.iter().map(|d| d.label).collect() }
    }
}

/// Truncates to `max_len − 1` tokens plus EOS when too long.
fn fit_length(tokens: &[u32], max_len: usize) -> Vec<u32> {
    if tokens.len() <= max_len {
        return tokens.to_vec();
    }
    let mut seq = tokens[..max_len - 1].to_vec();
    seq.push(EOS);
    seq
}

pub struct BatchIter<'a> {
    docs: &'a [Document],
    batch_size: usize,
    max_len: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.docs.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.docs.len());
        let batch = Batch::from_documents(&self.docs[self.pos..end], self.max_len);
        self.pos = end;
        Some(batch)
    }
}

/// Consecutive batches of `batch_size` documents; the last may be smaller.
pub fn batch_documents(docs: &[Document], batch_size: usize, max_len: usize) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be positive");
    BatchIter { docs, batch_size, max_len, pos: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[u32]) -> Document {
        Document { tokens: tokens.to_vec(), label: None }
    }

    #[test]
    fn batch_sizes() {
        let docs: Vec<_> = (0..5).map(|i| doc(&[4 + i, EOS])).collect();
        let sizes: Vec<usize> = batch_documents(&docs, 2, 8).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn long_documents_truncate_to_eos() {
        let b = Batch::from_documents(&[doc(&[4, 5, 6, 7, 8, EOS])], 4);
        assert_eq!(b.ids.row(0).to_vec(), vec![4, 5, 6, EOS]);
        assert_eq!(b.lengths, vec![4]);
    }

    #[test]
    fn short_documents_pad_right() {
        let b = Batch::from_documents(&[doc(&[4, EOS])], 5);
        assert_eq!(b.ids.row(0).to_vec(), vec![4, EOS, PAD, PAD, PAD]);
    }
}
