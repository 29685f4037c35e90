use std::collections::HashSet;

use geofold::data::{Dataset, Record, RecordId, YearRange};
use geofold::folds::{
    env_blocks_cv, random_kfold, spatial_blocks_cv, spatiotemporal_cv, tss_cv, FoldPlan, TemporalIntervals,
};
use geofold::rng;
use proptest::prelude::*;

fn random_dataset(n: usize, side_deg: f64, presence: f64, seed: u64) -> Dataset {
    let mut r = rng::rng(seed);
    let records = (0..n)
        .map(|i| Record {
            id: i as RecordId * 7 + 3,
            lon: 5.0 + r.random_range(0.0..side_deg),
            lat: 45.0 + r.random_range(0.0..side_deg),
            year: r.random_range(2000..=2011),
            label: u8::from(r.random::<f64>() < presence),
            features: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    Dataset::new(records, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

fn intervals() -> TemporalIntervals {
    TemporalIntervals::new(vec![
        YearRange::new(2000, 2003).unwrap(),
        YearRange::new(2004, 2007).unwrap(),
        YearRange::new(2008, 2011).unwrap(),
    ])
    .unwrap()
}

fn check_disjoint(d: &Dataset, plan: &FoldPlan) -> Result<(), TestCaseError> {
    let ids: HashSet<RecordId> = d.ids().into_iter().collect();
    for f in &plan.folds {
        prop_assert!(!f.train.is_empty() && !f.val.is_empty());
        let train: HashSet<_> = f.train.iter().collect();
        prop_assert!(f.val.iter().all(|id| !train.contains(id)));
        prop_assert!(f.train.iter().chain(&f.val).all(|id| ids.contains(id)));
    }
    Ok(())
}

/// Validation sets partition the dataset and each fold trains on the rest.
fn check_partition(d: &Dataset, plan: &FoldPlan) -> Result<(), TestCaseError> {
    let mut seen = HashSet::new();
    for f in &plan.folds {
        for id in &f.val {
            prop_assert!(seen.insert(*id), "record {} validated twice", id);
        }
        prop_assert_eq!(f.train.len() + f.val.len(), d.len());
    }
    prop_assert_eq!(seen.len(), d.len());
    Ok(())
}

fn years(d: &Dataset, ids: &[RecordId]) -> Vec<i32> {
    ids.iter().map(|&id| d.get(id).unwrap().year).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_kfold_partitions(n in 10usize..200, k in 2usize..8, seed in any::<u64>()) {
        let d = random_dataset(n, 2.0, 0.4, seed);
        let plan = random_kfold(&d, k, seed).unwrap();
        check_disjoint(&d, &plan)?;
        check_partition(&d, &plan)?;
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.val.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(random_kfold(&d, k, seed).unwrap().to_csv(), plan.to_csv());
    }

    #[test]
    fn spatial_blocks_partition(n in 30usize..200, block_km in 20.0f64..150.0, k in 2usize..6, seed in any::<u64>()) {
        let d = random_dataset(n, 3.0, 0.4, seed);
        if let Ok(plan) = spatial_blocks_cv(&d, block_km, k, seed) {
            check_disjoint(&d, &plan)?;
            check_partition(&d, &plan)?;
            prop_assert_eq!(spatial_blocks_cv(&d, block_km, k, seed).unwrap().to_csv(), plan.to_csv());
        }
    }

    #[test]
    fn environmental_clusters_hold_both_classes(n in 30usize..150, k in 2usize..6, seed in any::<u64>()) {
        let d = random_dataset(n, 2.0, 0.3, seed);
        if let Ok(plan) = env_blocks_cv(&d, k, seed) {
            check_disjoint(&d, &plan)?;
            check_partition(&d, &plan)?;
            for f in &plan.folds {
                let labels: HashSet<u8> = f.val.iter().map(|&id| d.get(id).unwrap().label).collect();
                prop_assert_eq!(labels.len(), 2);
                prop_assert!(!f.single_class_val);
            }
            prop_assert_eq!(env_blocks_cv(&d, k, seed).unwrap().to_csv(), plan.to_csv());
        }
    }

    #[test]
    fn spatiotemporal_folds_stay_inside_one_interval(n in 80usize..250, k in 2usize..4, seed in any::<u64>()) {
        let d = random_dataset(n, 3.0, 0.5, seed);
        let iv = intervals();
        if let Ok(plan) = spatiotemporal_cv(&d, 60.0, k, &iv, seed) {
            check_disjoint(&d, &plan)?;
            prop_assert_eq!(plan.len(), k * iv.len());
            for (j, f) in plan.folds.iter().enumerate() {
                let t = j / k;
                for y in years(&d, &f.train).into_iter().chain(years(&d, &f.val)) {
                    prop_assert_eq!(iv.interval_of(y), Some(t));
                }
            }
            prop_assert_eq!(spatiotemporal_cv(&d, 60.0, k, &iv, seed).unwrap().to_csv(), plan.to_csv());
        }
    }

    #[test]
    fn forward_chaining_trains_on_the_past(n in 30usize..200, seed in any::<u64>()) {
        let d = random_dataset(n, 2.0, 0.5, seed);
        let iv = intervals();
        if let Ok(plan) = tss_cv(&d, &iv) {
            check_disjoint(&d, &plan)?;
            prop_assert_eq!(plan.len(), iv.len() - 1);
            for (j, f) in plan.folds.iter().enumerate() {
                let max_train = years(&d, &f.train).into_iter().max().unwrap();
                let min_val = years(&d, &f.val).into_iter().min().unwrap();
                prop_assert!(max_train < min_val);
                let expected: HashSet<RecordId> = d
                    .records()
                    .iter()
                    .filter(|r| iv.interval_of(r.year).unwrap() <= j)
                    .map(|r| r.id)
                    .collect();
                prop_assert_eq!(f.train.iter().copied().collect::<HashSet<_>>(), expected);
            }
            let last: Vec<RecordId> = plan.last_fold_train().unwrap().to_vec();
            prop_assert!(years(&d, &last).iter().all(|&y| y <= 2007));
        }
    }
}
