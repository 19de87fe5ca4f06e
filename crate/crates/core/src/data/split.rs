use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, IdentityLabel};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub holdout_fraction: f64,
}

impl SplitPlan {
    /// Materializes fold `k` as (train, test) datasets.
    pub fn apply(&self, dataset: &Dataset, k: usize) -> (Dataset, Dataset) {
        let fold = &self.folds[k];
        (dataset.select_sessions(&fold.train), dataset.select_sessions(&fold.test))
    }
}

/// One fold per session (ascending session id); fold `k` tests on session `k`.
pub fn make_loso_splits(dataset: &Dataset) -> Result<SplitPlan> {
    let sessions: BTreeSet<u32> = dataset.session_index().keys().copied().collect();
    if sessions.len() < 2 {
        return Err(Error::Split(format!(
            "leave-one-session-out needs at least 2 sessions, found {}",
            sessions.len()
        )));
    }
    let folds = sessions
        .iter()
        .map(|&s| Fold {
            test: BTreeSet::from([s]),
            train: sessions.iter().copied().filter(|&t| t != s).collect(),
        })
        .collect();
    Ok(SplitPlan {
        folds,
        holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
    })
}

/// Test-set size for a class of `count` samples: `max(1, ⌊fraction·count⌋)`.
pub(crate) fn holdout_count(count: usize, fraction: f64) -> usize {
    // the small epsilon keeps products such as 0.15 × 60 from flooring to 8
    let raw = (fraction * count as f64 + 1e-9).floor() as usize;
    raw.max(1).min(count.saturating_sub(1))
}

/// Withholds `max(1, ⌊fraction·n_c⌋)` samples of every class `c` for testing,
/// chosen by a seeded shuffle. Both halves keep dataset order.
pub fn holdout_per_class(dataset: &Dataset, fraction: f64, seed_value: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<IdentityLabel, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut is_test = vec![false; dataset.len()];
    for (label, idx) in &by_class {
        if idx.len() < 2 {
            return Err(Error::Holdout {
                class: label.0,
                count: idx.len(),
            });
        }
        let take = holdout_count(idx.len(), fraction);
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut seed::rng(seed_value, "holdout", label.0 as u64));
        for &i in &shuffled[..take] {
            is_test[i] = true;
        }
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..dataset.len()).filter(|&i| is_test[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Origin, Patch, Sample};

    fn ds(labels_sessions: &[(u32, u32)]) -> Dataset {
        let samples = labels_sessions
            .iter()
            .map(|&(l, s)| Sample {
                image: Patch::blank(2),
                label: IdentityLabel(l),
                session_id: s,
                tracklet_id: 0,
                origin: Origin::Original,
                face: None,
                source: None,
            })
            .collect();
        Dataset::new(samples, 3).unwrap()
    }

    #[test]
    fn thirteen_sessions_give_thirteen_singleton_folds() {
        let d = ds(&(0..13).map(|s| (1, s)).collect::<Vec<_>>());
        let plan = make_loso_splits(&d).unwrap();
        assert_eq!(plan.folds.len(), 13);
        assert!(plan.folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 12));
        assert_eq!(plan.holdout_fraction, 0.15);
    }

    #[test]
    fn two_sessions() {
        let d = ds(&[(1, 0), (1, 1)]);
        let plan = make_loso_splits(&d).unwrap();
        assert_eq!(
            plan.folds,
            vec![
                Fold {
                    train: BTreeSet::from([1]),
                    test: BTreeSet::from([0])
                },
                Fold {
                    train: BTreeSet::from([0]),
                    test: BTreeSet::from([1])
                },
            ]
        );
    }

    #[test]
    fn one_session_is_an_error() {
        assert!(matches!(make_loso_splits(&ds(&[(1, 0), (2, 0)])), Err(Error::Split(_))));
    }

    #[test]
    fn holdout_counts() {
        assert_eq!(holdout_count(100, 0.15), 15);
        assert_eq!(holdout_count(20, 0.15), 3);
        assert_eq!(holdout_count(2, 0.15), 1);
        assert_eq!(holdout_count(60, 0.15), 9);
    }

    #[test]
    fn holdout_splits_each_class() {
        let mut rows = vec![(1, 0); 100];
        rows.extend(vec![(2, 0); 20]);
        rows.extend(vec![(3, 1); 2]);
        let d = ds(&rows);
        let (train, test) = holdout_per_class(&d, 0.15, 9).unwrap();
        let tc = test.class_counts();
        assert_eq!(tc[&IdentityLabel(1)], 15);
        assert_eq!(tc[&IdentityLabel(2)], 3);
        assert_eq!(tc[&IdentityLabel(3)], 1);
        assert_eq!(train.len() + test.len(), d.len());
        assert_eq!(train.class_counts()[&IdentityLabel(1)], 85);
    }

    #[test]
    fn holdout_rejects_singleton_class() {
        let d = ds(&[(1, 0), (1, 0), (2, 0)]);
        assert!(matches!(
            holdout_per_class(&d, 0.15, 0),
            Err(Error::Holdout { class: 2, count: 1 })
        ));
    }
}
