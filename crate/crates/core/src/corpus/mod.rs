//! Text ingestion: loading, tokenization, vocabulary, embeddings, splits and batching.

mod batch;
mod embeddings;
mod split;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_documents, Batch, BatchIter};
pub use embeddings::{embedding_lexicon, load_embeddings, random_embeddings, EmbeddingMatrix};
pub use split::{make_semisupervised_sets, split_corpus, CorpusSplit, SemiSupervisedSets};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOS: u32 = 2;
pub const BOS: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<eos>", "<bos>"];

/// Default maximum sequence length, EOS included.
pub const DEFAULT_MAX_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    OneDocPerLine,
    LabeledTsv,
}

/// A document as read from disk, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub text: String,
    pub label: Option<u32>,
}

/// Encoded token ids ending with EOS (no padding), plus an optional class id in 1..=K.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<u32>,
    pub label: Option<u32>,
}

/// Reads a corpus. Blank lines are not records and are skipped.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawDocument>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match format {
            CorpusFormat::OneDocPerLine => docs.push(RawDocument { text: line.to_string(), label: None }),
            CorpusFormat::LabeledTsv => {
                let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
                let (label, text) = line
                    .split_once('\t')
                    .ok_or_else(|| parse_err("expected `label<TAB>text`".into()))?;
                let label: u32 = label
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("label `{label}` is not a positive integer")))?;
                if label == 0 {
                    return Err(parse_err("labels start at 1".into()));
                }
                docs.push(RawDocument { text: text.to_string(), label: Some(label) });
            }
        }
    }
    Ok(docs)
}

/// Lowercases and splits on whitespace; every punctuation or symbol
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Bijective token ↔ id map. Ids 0..4 are PAD, UNK, EOS and BOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        Vocabulary::from_tokens(f.tokens)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { tokens: v.id_to_token }
    }
}

impl Vocabulary {
    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { id_to_token, token_to_id }
    }

    pub fn specials_only() -> Self {
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Token ids for `tokens`, unknown tokens mapped to UNK.
    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// Tokenizes and encodes `text`, keeping at most `max_len − 1` tokens followed by EOS.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids = self.ids(&tokenize(text));
        ids.truncate(max_len.saturating_sub(1));
        ids.push(EOS);
        ids
    }

    pub fn encode_document(&self, raw: &RawDocument, max_len: usize) -> Document {
        Document { tokens: self.encode(&raw.text, max_len), label: raw.label }
    }

    /// Appends unseen non-special `tokens` in order until the vocabulary holds
    /// `max_size` non-special tokens.
    pub fn extended<'a>(&self, tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Vocabulary {
        let mut out = self.id_to_token.clone();
        let mut seen: std::collections::HashSet<&str> = self.id_to_token.iter().map(String::as_str).collect();
        for tok in tokens {
            if out.len() - SPECIALS.len() >= max_size {
                break;
            }
            if seen.insert(tok) {
                out.push(tok.to_string());
            }
        }
        Vocabulary::from_tokens(out)
    }

    /// Inverse of [`encode`](Self::encode) up to the first EOS, specials dropped.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id > BOS)
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }
}

/// Keeps tokens seen at least `min_freq` times, at most `max_size` of them,
/// by descending frequency with lexicographic tie-breaking.
pub fn build_vocabulary(docs: &[RawDocument], min_freq: usize, max_size: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        for tok in tokenize(&doc.text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_freq && !SPECIALS.contains(&tok.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size);

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn raw(text: &str) -> RawDocument {
        RawDocument { text: text.into(), label: None }
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn extension_appends_in_order_and_caps() {
        let v = build_vocabulary(&[raw("a b")], 1, 10);
        let e = v.extended(["b", "c", "<unk>", "d", "e"], 4);
        assert_eq!(&e.tokens()[SPECIALS.len()..], ["a", "b", "c", "d"]);
        assert_eq!(e.id("a"), v.id("a"));
    }

    #[test]
    fn loads_one_doc_per_line() {
        let f = write_tmp("first doc\nsecond doc\nthird\n");
        let docs = load_corpus(f.path(), CorpusFormat::OneDocPerLine).unwrap();
        assert_eq!(docs.len(), 3);
        assert!(docs.iter().all(|d| d.label.is_none()));
    }

    #[test]
    fn loads_labeled_tsv() {
        let f = write_tmp("1\thello world\n");
        let docs = load_corpus(f.path(), CorpusFormat::LabeledTsv).unwrap();
        assert_eq!(docs, vec![RawDocument { text: "hello world".into(), label: Some(1) }]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("");
        assert!(load_corpus(f.path(), CorpusFormat::OneDocPerLine).unwrap().is_empty());
    }

    #[test]
    fn malformed_tsv_reports_line() {
        let f = write_tmp("1\tok\nnot labeled\n");
        match load_corpus(f.path(), CorpusFormat::LabeledTsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/corpus.txt"), CorpusFormat::OneDocPerLine).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Hello, World!  it's"), vec!["hello", ",", "world", "!", "it", "'", "s"]);
    }

    #[test]
    fn min_freq_threshold() {
        let v = build_vocabulary(&[raw("a a b")], 2, 100);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let v = build_vocabulary(&[raw("a a a a a b b b")], 1, 1);
        assert!(v.contains("a") && !v.contains("b"));
        assert_eq!(v.len(), SPECIALS.len() + 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocabulary(&[raw("b a b a")], 1, 1);
        assert!(v.contains("a") && !v.contains("b"));
    }

    #[test]
    fn all_rare_corpus_gives_specials() {
        let v = build_vocabulary(&[raw("x y z")], 5, 10);
        assert_eq!(v, Vocabulary::specials_only());
        assert_eq!(v.id("<pad>"), Some(PAD));
    }

    #[test]
    fn encode_truncates_and_terminates() {
        let v = build_vocabulary(&[raw("a b c d e")], 1, 100);
        let ids = v.encode("a b c d e", 3);
        assert_eq!(ids.len(), 3);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(v.decode(&ids), vec!["a", "b"]);
        assert_eq!(v.encode("zzz", 10), vec![UNK, EOS]);
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let v = build_vocabulary(&[raw("the cat sat on the mat")], 1, 100);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }

    proptest! {
        #[test]
        fn detokenize_round_trips(words in proptest::collection::vec("[a-z]{1,6}|[,.!?]", 0..20)) {
            let text = words.join(" ");
            let toks = tokenize(&text);
            prop_assert_eq!(tokenize(&detokenize(&toks)), toks.clone());
            let vocab = build_vocabulary(&[raw(&text)], 1, 1000);
            let ids = vocab.ids(&toks);
            prop_assert!(ids.iter().all(|&id| (id as usize) < vocab.len()));
            prop_assert_eq!(vocab.decode(&ids), toks);
        }
    }
}
