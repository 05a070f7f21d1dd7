use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction of each known class that goes to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Assignment of original class ids to known and unknown roles.
///
/// Known class `known_classes[i]` is relabeled `i`; every unknown class
/// collapses onto label `k = known_classes.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn k(&self) -> usize {
        self.known_classes.len()
    }

    pub fn unknown_label(&self) -> usize {
        self.k()
    }

    /// 0-based relabeling of an original class id.
    pub fn relabel(&self, original: usize) -> usize {
        self.known_classes
            .iter()
            .position(|&c| c == original)
            .unwrap_or(self.k())
    }
}

/// Rows of one side of a partition, with relabeled 0-based targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Row indices into the source dataset.
    pub ids: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Picks `k_known` classes at random, sends [`TRAIN_FRACTION`] of each known
/// class to training and everything else to test.
pub fn partition(dataset: &LabeledDataset, k_known: usize, seed: u64) -> Result<(Split, Split, PartitionSpec)> {
    let classes = dataset.class_count;
    if k_known == 0 || k_known >= classes {
        return Err(Error::InvalidArgument(format!(
            "k_known must be in 1..{classes}, got {k_known}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);
    let known_classes = order[..k_known].to_vec();
    let mut unknown_classes = order[k_known..].to_vec();
    unknown_classes.sort_unstable();
    let spec = PartitionSpec {
        known_classes,
        unknown_classes,
        seed,
    };

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for &c in &spec.known_classes {
        let mut members = by_class[c].clone();
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "known class {c} has {} samples, need at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, members.len() - 1);
        train_ids.extend_from_slice(&members[..n_train]);
        test_ids.extend_from_slice(&members[n_train..]);
    }
    for &c in &spec.unknown_classes {
        test_ids.extend_from_slice(&by_class[c]);
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();

    let make = |ids: Vec<usize>| Split {
        features: dataset.features.select_rows(&ids),
        labels: ids.iter().map(|&i| spec.relabel(dataset.labels[i])).collect(),
        ids,
    };
    let train = make(train_ids);
    let test = make(test_ids);
    Ok((train, test, spec))
}
