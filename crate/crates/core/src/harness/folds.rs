//! Stratified fold assignment.

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// A k-fold partition: every sample is assigned exactly one fold, and
/// per-class counts across folds differ by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// (train indices, test indices) for one fold, in dataset order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        assert!(fold < self.k);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Within each class, a seeded permutation dealt round-robin into k folds.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidSpec("need at least 2 folds".to_string()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels".to_string()));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for (class, members) in per_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                count: members.len(),
                needed: k,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut assignments = vec![0usize; labels.len()];
    for members in per_class.iter_mut() {
        rng.shuffle(members);
        for (pos, &i) in members.iter().enumerate() {
            assignments[i] = pos % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_divisibility_one_per_fold() {
        let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let plan = stratified_kfold(&labels, 3, 1).unwrap();
        for fold in 0..3 {
            let (_, test) = plan.split(fold);
            assert_eq!(test.len(), 3);
            let mut classes: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            classes.sort_unstable();
            assert_eq!(classes, vec![0, 1, 2]);
        }
    }

    #[test]
    fn folds_partition_the_index_set() {
        let labels: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let plan = stratified_kfold(&labels, 5, 9).unwrap();
        let mut seen = [false; 50];
        for fold in 0..5 {
            let (train, test) = plan.split(fold);
            assert_eq!(train.len() + test.len(), 50);
            for &i in &test {
                assert!(!seen[i], "index {i} in two test folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn round_robin_sizes() {
        let labels = vec![0usize; 10];
        let plan = stratified_kfold(&labels, 3, 4).unwrap();
        let mut sizes: Vec<usize> = (0..3).map(|f| plan.split(f).1.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn per_class_balance_within_one() {
        let labels: Vec<usize> = (0..47).map(|i| i % 3).collect();
        let plan = stratified_kfold(&labels, 4, 2).unwrap();
        for class in 0..3 {
            let mut counts = vec![0usize; 4];
            for (i, &l) in labels.iter().enumerate() {
                if l == class {
                    counts[plan.assignments()[i]] += 1;
                }
            }
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "class {class}: {counts:?}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = stratified_kfold(&labels, 5, 7).unwrap();
        let b = stratified_kfold(&labels, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&labels, 5, 8).unwrap();
        assert_ne!(a.assignments(), c.assignments());
    }

    #[test]
    fn small_class_named_in_error() {
        let labels = vec![0, 0, 0, 0, 1, 1];
        let err = stratified_kfold(&labels, 3, 0).unwrap_err();
        assert!(err.to_string().contains('1'), "{err}");
    }
}
