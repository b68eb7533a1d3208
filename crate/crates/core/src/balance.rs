//! SMOTE oversampling of the training set.
//!
//! Each synthetic epoch interpolates between a minority epoch and one of its
//! k nearest same-class neighbors (exact Euclidean search on the flattened
//! epoch). Parents are visited round-robin over a seeded order so the output
//! depends only on the input and the seed.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::epoching::{Epoch, EpochSet};
use crate::rng::{self, domain};
use crate::signal_model::Class;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("class {class} has {count} epochs, needs more than k = {k}")]
    TooFewMinoritySamples { class: Class, count: usize, k: usize },
    #[error("only one class present")]
    SingleClassInput,
    #[error("epoch {index} has {available} same-class neighbors, {k} requested")]
    NotEnoughNeighbors { index: usize, available: usize, k: usize },
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, seed: 0 }
    }
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k nearest same-class neighbors of `index`, ascending distance, ties by lower index.
pub fn knn_same_class(set: &EpochSet, index: usize, k: usize) -> Result<Vec<usize>, BalanceError> {
    let query = set.epochs.get(index).ok_or(BalanceError::IndexOutOfRange(index))?;
    let mut cands: Vec<(f64, usize)> = set
        .epochs
        .iter()
        .enumerate()
        .filter(|&(j, e)| j != index && e.label == query.label)
        .map(|(j, e)| (sq_distance(&query.data, &e.data), j))
        .collect();
    if cands.len() < k {
        return Err(BalanceError::NotEnoughNeighbors { index, available: cands.len(), k });
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(cands.into_iter().take(k).map(|(_, j)| j).collect())
}

/// Oversamples every minority class up to the majority count, then reshuffles.
pub fn smote_balance(train: &EpochSet, cfg: &SmoteConfig) -> Result<EpochSet, BalanceError> {
    let counts = train.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(BalanceError::SingleClassInput);
    }
    let majority = *counts.iter().max().unwrap();
    for class in Class::ALL {
        let n = counts[class.index()];
        if n > 0 && n < majority && n <= cfg.k_neighbors {
            return Err(BalanceError::TooFewMinoritySamples { class, count: n, k: cfg.k_neighbors });
        }
    }

    let mut out: Vec<Epoch> = train.epochs.clone();
    for class in Class::ALL {
        let n = counts[class.index()];
        if n == 0 || n == majority {
            continue;
        }
        let mut rng = rng::stream(cfg.seed, domain::SMOTE, class as u64);
        let mut parents: Vec<usize> = (0..train.len()).filter(|&i| train.epochs[i].label == class).collect();
        parents.shuffle(&mut rng);
        let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; train.len()];
        for s in 0..majority - n {
            let parent = parents[s % n];
            let nn = match &neighbors[parent] {
                Some(nn) => nn,
                None => neighbors[parent].insert(knn_same_class(train, parent, cfg.k_neighbors)?),
            };
            let pick = nn[rng.random_range(0..nn.len())];
            let u: f64 = rng.random();
            let (a, b) = (&train.epochs[parent], &train.epochs[pick]);
            let data = a.data.iter().zip(&b.data).map(|(x, y)| x + u * (y - x)).collect();
            out.push(Epoch { data, synthetic: true, ..a.clone_header() });
        }
    }
    let mut rng = rng::stream(cfg.seed, domain::SMOTE, u64::MAX);
    out.shuffle(&mut rng);
    Ok(EpochSet::new(out))
}

impl Epoch {
    /// Copy of every field except the sample buffer.
    fn clone_header(&self) -> Epoch {
        Epoch {
            data: Vec::new(),
            len: self.len,
            n_channels: self.n_channels,
            label: self.label,
            trigger_index: self.trigger_index,
            window_index: self.window_index,
            synthetic: self.synthetic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: &[f64], label: Class, trigger: u32) -> Epoch {
        Epoch {
            data: v.to_vec(),
            len: v.len(),
            n_channels: 1,
            label,
            trigger_index: trigger,
            window_index: 0,
            synthetic: false,
        }
    }

    #[test]
    fn knn_on_a_line() {
        let set = EpochSet::new([0.0, 1.0, 3.0, 10.0].iter().enumerate().map(|(i, &x)| point(&[x], Class::Left, i as u32)).collect());
        assert_eq!(knn_same_class(&set, 0, 2).unwrap(), vec![1, 2]);
        assert_eq!(knn_same_class(&set, 3, 3).unwrap(), vec![2, 1, 0]);
        assert!(matches!(knn_same_class(&set, 0, 4), Err(BalanceError::NotEnoughNeighbors { available: 3, .. })));
    }

    #[test]
    fn knn_duplicates_and_other_classes() {
        let set = EpochSet::new(vec![
            point(&[2.0], Class::Left, 0),
            point(&[2.0], Class::Right, 1),
            point(&[5.0], Class::Left, 2),
            point(&[2.0], Class::Left, 3),
            point(&[2.0], Class::Left, 4),
        ]);
        assert_eq!(knn_same_class(&set, 0, 3).unwrap(), vec![3, 4, 2]);
        assert!(!knn_same_class(&set, 3, 3).unwrap().contains(&3));
    }

    fn counts_set(counts: [usize; 3]) -> EpochSet {
        let mut epochs = Vec::new();
        for class in Class::ALL {
            for i in 0..counts[class.index()] {
                let x = i as f64 + 10.0 * class as u8 as f64;
                epochs.push(point(&[x, x * 0.5, -x], class, epochs.len() as u32));
            }
        }
        EpochSet::new(epochs)
    }

    #[test]
    fn balances_counts() {
        let out = smote_balance(&counts_set([100, 50, 50]), &SmoteConfig::default()).unwrap();
        assert_eq!(out.class_counts(), [100, 100, 100]);
        assert_eq!(out.epochs.iter().filter(|e| e.synthetic).count(), 100);
        assert_eq!(out.len() % 3, 0);
    }

    #[test]
    fn balanced_input_only_reshuffled() {
        let input = counts_set([7, 7, 7]);
        let out = smote_balance(&input, &SmoteConfig { k_neighbors: 5, seed: 3 }).unwrap();
        assert_eq!(out.len(), input.len());
        assert!(out.epochs.iter().all(|e| !e.synthetic));
        let mut a: Vec<u32> = out.epochs.iter().map(|e| e.trigger_index).collect();
        a.sort();
        assert_eq!(a, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn error_paths() {
        assert_eq!(smote_balance(&counts_set([9, 0, 0]), &SmoteConfig::default()), Err(BalanceError::SingleClassInput));
        assert!(matches!(
            smote_balance(&counts_set([20, 5, 20]), &SmoteConfig::default()),
            Err(BalanceError::TooFewMinoritySamples { class: Class::Left, count: 5, k: 5 })
        ));
    }

    #[test]
    fn missing_class_is_left_alone() {
        let out = smote_balance(&counts_set([12, 8, 0]), &SmoteConfig::default()).unwrap();
        assert_eq!(out.class_counts(), [12, 12, 0]);
    }

    #[test]
    fn reference_total_is_divisible_by_three() {
        assert_eq!(4278 % 3, 0);
        assert_eq!(4278 / 3, 1426);
    }
}
