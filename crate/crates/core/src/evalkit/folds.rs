//! k-fold assignment: stratified over trials, or grouped so no subject ever
//! spans a train/test boundary.

use std::collections::BTreeMap;

use crate::classifier::Label;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldMode {
    TrialStratified,
    SubjectGrouped,
}

/// What the fold planner needs to know about one trial.
#[derive(Debug, Clone)]
pub struct FoldItem {
    pub trial_id: String,
    pub subject_id: String,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub k: usize,
    pub mode: FoldMode,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, trial_id: &str) -> Option<usize> {
        self.assignment.get(trial_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn kfold(items: &[FoldItem], k: usize, mode: FoldMode, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::usage("k-fold needs k >= 2"));
    }
    if k > items.len() {
        return Err(Error::usage(format!(
            "k = {} exceeds the {} available samples",
            k,
            items.len()
        )));
    }
    let mut assignment = BTreeMap::new();
    match mode {
        FoldMode::TrialStratified => {
            let mut class0: Vec<&FoldItem> =
                items.iter().filter(|i| i.label == Label::Class0).collect();
            let mut class1: Vec<&FoldItem> =
                items.iter().filter(|i| i.label == Label::Class1).collect();
            if class0.is_empty() || class1.is_empty() {
                return Err(Error::usage("stratified folds need both classes"));
            }
            let mut rng = Rng::new(seed);
            rng.shuffle(&mut class0);
            rng.shuffle(&mut class1);
            // Deal each class round-robin; per-fold class counts stay within
            // one of each other and so does the overall ratio.
            for class in [class0, class1] {
                for (i, item) in class.into_iter().enumerate() {
                    assignment.insert(item.trial_id.clone(), i % k);
                }
            }
        }
        FoldMode::SubjectGrouped => {
            let mut by_subject: BTreeMap<&str, Vec<&FoldItem>> = BTreeMap::new();
            for item in items {
                by_subject.entry(&item.subject_id).or_default().push(item);
            }
            if by_subject.len() < k {
                return Err(Error::usage(format!(
                    "subject-grouped folds need at least k = {} subjects, have {}",
                    k,
                    by_subject.len()
                )));
            }
            let mut subjects: Vec<(&str, Vec<&FoldItem>)> = by_subject.into_iter().collect();
            let mut rng = Rng::new(seed);
            rng.shuffle(&mut subjects);
            // Greedy: each subject lands in the currently smallest fold.
            let mut sizes = vec![0usize; k];
            for (_, trials) in subjects {
                let fold = sizes
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &s)| s)
                    .map(|(f, _)| f)
                    .unwrap();
                sizes[fold] += trials.len();
                for t in trials {
                    assignment.insert(t.trial_id.clone(), fold);
                }
            }
        }
    }
    debug_assert_eq!(assignment.len(), items.len());
    Ok(FoldPlan {
        k,
        mode,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n0: usize, n1: usize, subjects: usize) -> Vec<FoldItem> {
        (0..n0 + n1)
            .map(|i| FoldItem {
                trial_id: format!("t{i:03}"),
                subject_id: format!("s{:02}", i % subjects),
                label: if i < n0 { Label::Class0 } else { Label::Class1 },
            })
            .collect()
    }

    #[test]
    fn stratified_sizes_and_ratios_on_the_74_trial_layout() {
        // 50 positive + 24 negative trials into 10 folds: sizes 7 or 8, and
        // per-fold class counts within one of the proportional share.
        let mut xs = items(24, 50, 12);
        let plan = kfold(&xs, 10, FoldMode::TrialStratified, 7).unwrap();
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|&s| s == 7 || s == 8), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 74);
        for fold in 0..10 {
            let in_fold: Vec<&FoldItem> = xs
                .iter()
                .filter(|i| plan.fold_of(&i.trial_id) == Some(fold))
                .collect();
            let pos = in_fold.iter().filter(|i| i.label == Label::Class1).count();
            let neg = in_fold.len() - pos;
            assert!((pos as isize - 5).abs() <= 1, "fold {fold}: {pos} positives");
            assert!((neg as isize - 2).unsigned_abs() <= 1, "fold {fold}: {neg} negatives");
        }
        // Determinism under the seed.
        xs.rotate_left(0);
        let again = kfold(&xs, 10, FoldMode::TrialStratified, 7).unwrap();
        assert_eq!(plan.assignment, again.assignment);
        let other = kfold(&xs, 10, FoldMode::TrialStratified, 8).unwrap();
        assert_ne!(plan.assignment, other.assignment);
    }

    #[test]
    fn leave_one_out_boundary() {
        let xs = items(3, 3, 6);
        let plan = kfold(&xs, 6, FoldMode::TrialStratified, 1).unwrap();
        assert!(plan.fold_sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn subject_grouping_never_splits_a_subject() {
        let xs = items(10, 10, 5);
        let plan = kfold(&xs, 5, FoldMode::SubjectGrouped, 3).unwrap();
        // Each subject's trials share one fold.
        for s in 0..5 {
            let folds: Vec<usize> = xs
                .iter()
                .filter(|i| i.subject_id == format!("s{s:02}"))
                .map(|i| plan.fold_of(&i.trial_id).unwrap())
                .collect();
            assert!(folds.windows(2).all(|w| w[0] == w[1]), "subject {s} split");
        }
        // 5 subjects into 5 folds: one subject per fold.
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|&s| s == 4), "{sizes:?}");
    }

    #[test]
    fn error_paths() {
        let xs = items(2, 2, 4);
        assert!(kfold(&xs, 5, FoldMode::TrialStratified, 0).is_err()); // k > n
        assert!(kfold(&xs, 1, FoldMode::TrialStratified, 0).is_err()); // k < 2
        let one_class = items(4, 0, 4);
        assert!(kfold(&one_class, 2, FoldMode::TrialStratified, 0).is_err());
        assert!(kfold(&xs, 5, FoldMode::SubjectGrouped, 0).is_err()); // k > subjects
    }
}
