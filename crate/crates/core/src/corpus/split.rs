use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

/// Train/validation/test partition of a corpus, stored as document indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    pub fn select<T: Clone>(indices: &[usize], items: &[T]) -> Vec<T> {
        indices.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn train_of<T: Clone>(&self, items: &[T]) -> Vec<T> {
        Self::select(&self.train, items)
    }

    pub fn validation_of<T: Clone>(&self, items: &[T]) -> Vec<T> {
        Self::select(&self.validation, items)
    }

    pub fn test_of<T: Clone>(&self, items: &[T]) -> Vec<T> {
        Self::select(&self.test, items)
    }
}

/// Seeded shuffle followed by a contiguous partition by `ratios`.
pub fn split_corpus(n_docs: usize, ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if n_docs < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 documents to split, got {n_docs}")));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut order: Vec<usize> = (0..n_docs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = n_docs as f64;
    let n_train = (ratios[0] * n).round() as usize;
    let n_val = (((ratios[0] + ratios[1]) * n).round() as usize).min(n_docs) - n_train;
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(CorpusSplit { seed, train: order, validation, test })
}

/// Labeled subset ℒ𝒮 and label-stripped remainder of a training partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiSupervisedSets {
    pub labeled: Vec<Document>,
    pub unlabeled: Vec<Document>,
}

/// Stratified draw of ⌈fraction·|class|⌉ documents per class in 1..=`num_classes`.
pub fn make_semisupervised_sets(
    train: &[Document],
    num_classes: u32,
    labeled_fraction: f64,
    seed: u64,
) -> Result<SemiSupervisedSets> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("labeled fraction {labeled_fraction} outside (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes as usize];
    for (i, doc) in train.iter().enumerate() {
        match doc.label {
            Some(y) if (1..=num_classes).contains(&y) => by_class[(y - 1) as usize].push(i),
            Some(y) => return Err(Error::InvalidInput(format!("label {y} outside 1..={num_classes}"))),
            None => return Err(Error::InvalidInput(format!("training document {i} has no label"))),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_labeled = vec![false; train.len()];
    let mut labeled = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidInput(format!("class {} has no training documents", c + 1)));
        }
        members.shuffle(&mut rng);
        let take = ((labeled_fraction * members.len() as f64).ceil() as usize).min(members.len());
        for &i in &members[..take] {
            is_labeled[i] = true;
            labeled.push(train[i].clone());
        }
    }
    let unlabeled = train
        .iter()
        .zip(&is_labeled)
        .filter(|(_, &l)| !l)
        .map(|(d, _)| Document { tokens: d.tokens.clone(), label: None })
        .collect();
    Ok(SemiSupervisedSets { labeled, unlabeled })
}
