use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Disjoint train/validation/test patient lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// On-disk form of a split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl From<&SplitAssignment> for SplitManifest {
    fn from(s: &SplitAssignment) -> Self {
        Self {
            seed: s.seed,
            ratios: s.ratios,
            train: s.train_ids.clone(),
            val: s.val_ids.clone(),
            test: s.test_ids.clone(),
        }
    }
}

impl From<SplitManifest> for SplitAssignment {
    fn from(m: SplitManifest) -> Self {
        Self {
            train_ids: m.train,
            val_ids: m.val,
            test_ids: m.test,
            ratios: m.ratios,
            seed: m.seed,
        }
    }
}

impl SplitAssignment {
    pub fn ids(&self, split: crate::engine::Split) -> &[String] {
        use crate::engine::Split;
        match split {
            Split::Train => &self.train_ids,
            Split::Val => &self.val_ids,
            Split::Test => &self.test_ids,
        }
    }
}

/// Seeded uniform shuffle of the (sorted) ids, then
/// `|val| = floor(r_val * N)`, `|test| = floor(r_test * N)` and the rest to
/// train. Each list is returned sorted.
pub fn split_patients(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, DataError> {
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(DataError::InvalidRatios(format!("negative or non-finite ratio in {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(format!("ratios {ratios:?} sum to {total}, not 1")));
    }
    let mut unique = BTreeSet::new();
    for id in ids {
        if !unique.insert(id.clone()) {
            return Err(DataError::DuplicateId(id.clone()));
        }
    }
    let mut order: Vec<String> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len() as f64;
    // Tolerance keeps products such as 0.29 * 100 = 28.999... at 29.
    let n_val = (ratios[1] * n + 1e-9).floor() as usize;
    let n_test = (ratios[2] * n + 1e-9).floor() as usize;
    let n_train = order.len() - n_val - n_test;

    let mut val_ids = order[n_train..n_train + n_val].to_vec();
    let mut test_ids = order[n_train + n_val..].to_vec();
    let mut train_ids = order[..n_train].to_vec();
    train_ids.sort();
    val_ids.sort();
    test_ids.sort();
    Ok(SplitAssignment {
        train_ids,
        val_ids,
        test_ids,
        ratios,
        seed,
    })
}
