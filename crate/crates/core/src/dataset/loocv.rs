//! Leave-one-subject-out cross-validation.

use std::collections::BTreeSet;

use super::manifest::ClipRecord;
use super::DatasetError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
}

impl Fold {
    /// Indices of `records` on the train and test side of this fold.
    pub fn partition(&self, records: &[ClipRecord]) -> (Vec<usize>, Vec<usize>) {
        (0..records.len()).partition(|&i| records[i].subject != self.test_subject)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoocvPlan {
    pub folds: Vec<Fold>,
}

/// One fold per distinct subject, in lexicographic subject order.
pub fn split_loocv(records: &[ClipRecord]) -> Result<LoocvPlan, DatasetError> {
    let subjects: BTreeSet<&str> = records.iter().map(|r| r.subject.as_str()).collect();
    if subjects.len() < 2 {
        return Err(DatasetError::TooFewSubjects(subjects.len()));
    }
    let folds = subjects
        .iter()
        .map(|&test| Fold {
            test_subject: test.to_string(),
            train_subjects: subjects.iter().filter(|&&s| s != test).map(|s| s.to_string()).collect(),
        })
        .collect();
    Ok(LoocvPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::manifest::parse_manifest;
    use std::path::Path;

    #[test]
    fn seven_subjects() {
        let text: String = (0..21)
            .map(|i| format!("clip=c{i}.evm subject=p{} au=2 modality=events-davis\n", i % 7))
            .collect();
        let recs = parse_manifest(&text, Path::new("")).unwrap();
        let plan = split_loocv(&recs).unwrap();
        assert_eq!(plan.folds.len(), 7);
        for f in &plan.folds {
            let (train, test) = f.partition(&recs);
            assert_eq!(test.len(), 3);
            assert_eq!(train.len(), 18);
            assert!(test.iter().all(|&i| recs[i].subject == f.test_subject));
            assert_eq!(f.train_subjects.len(), 6);
        }
    }

    #[test]
    fn too_few_subjects() {
        let recs = parse_manifest("clip=a subject=x au=2 modality=rgb-webcam\n", Path::new("")).unwrap();
        assert_eq!(split_loocv(&recs), Err(DatasetError::TooFewSubjects(1)));
        assert_eq!(split_loocv(&[]), Err(DatasetError::TooFewSubjects(0)));
    }
}
