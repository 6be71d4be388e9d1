use std::collections::BTreeSet;

use evmx_core::dataset::{split_loocv, AuLabel, ClipRecord, DatasetError, Modality};
use proptest::prelude::*;

fn record(subject: usize, au_index: usize, k: usize) -> ClipRecord {
    ClipRecord {
        clip_path: format!("c{k}.evm").into(),
        subject: format!("p{subject}"),
        label: AuLabel::from_class_index(au_index).unwrap(),
        modality: Modality::EventsDavis,
        lux: None,
        bbox: None,
    }
}

proptest! {
    #[test]
    fn folds_are_leakage_free_singletons(subjects in prop::collection::vec((0usize..12, 0usize..21), 2..200)) {
        let records: Vec<ClipRecord> = subjects.iter().enumerate().map(|(k, &(s, a))| record(s, a, k)).collect();
        let distinct: BTreeSet<&str> = records.iter().map(|r| r.subject.as_str()).collect();
        match split_loocv(&records) {
            Err(DatasetError::TooFewSubjects(n)) => prop_assert!(distinct.len() < 2 && n == distinct.len()),
            Err(e) => prop_assert!(false, "unexpected {e}"),
            Ok(plan) => {
                prop_assert_eq!(plan.folds.len(), distinct.len());
                let tests: BTreeSet<&str> = plan.folds.iter().map(|f| f.test_subject.as_str()).collect();
                prop_assert_eq!(&tests, &distinct);
                for fold in &plan.folds {
                    prop_assert!(!fold.train_subjects.contains(&fold.test_subject));
                    prop_assert_eq!(fold.train_subjects.len() + 1, distinct.len());
                    let (train, test) = fold.partition(&records);
                    prop_assert_eq!(train.len() + test.len(), records.len());
                    prop_assert!(test.iter().all(|&i| records[i].subject == fold.test_subject));
                    prop_assert!(train.iter().all(|&i| records[i].subject != fold.test_subject));
                    prop_assert!(!test.is_empty());
                }
                let mut covered: Vec<usize> = plan.folds.iter().flat_map(|f| f.partition(&records).1).collect();
                covered.sort_unstable();
                prop_assert_eq!(covered, (0..records.len()).collect::<Vec<_>>());
            }
        }
    }
}

#[test]
fn single_subject_is_rejected() {
    let records = vec![record(3, 0, 0), record(3, 1, 1)];
    assert_eq!(split_loocv(&records), Err(DatasetError::TooFewSubjects(1)));
}
