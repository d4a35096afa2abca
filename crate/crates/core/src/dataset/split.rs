use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_pairs: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Leave-one-subject-out split: one fold per subject pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

impl FoldSplit {
    pub fn fold_of_pair(&self, pair: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.test_pairs.iter().any(|p| p == pair))
    }
}

/// One fold per distinct subject pair (sorted by id). Every perspective of a
/// session shares its pair and therefore its fold.
pub fn loso_split(sessions: &[(String, String)]) -> Result<FoldSplit> {
    let pairs: BTreeSet<&str> = sessions.iter().map(|(_, p)| p.as_str()).collect();
    if pairs.len() < 2 {
        return Err(Error::Validation(format!(
            "leave-one-subject-out needs at least 2 subject pairs, found {}",
            pairs.len()
        )));
    }
    let ids = |keep: &dyn Fn(&str) -> bool| -> Vec<String> {
        let set: BTreeSet<&str> = sessions
            .iter()
            .filter(|(_, p)| keep(p))
            .map(|(s, _)| s.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    };
    let folds = pairs
        .iter()
        .map(|&pair| Fold {
            test_pairs: vec![pair.to_string()],
            train_ids: ids(&|p| p != pair),
            test_ids: ids(&|p| p == pair),
        })
        .collect();
    Ok(FoldSplit { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: usize, per_pair: usize) -> Vec<(String, String)> {
        (0..pairs)
            .flat_map(|p| (0..per_pair).map(move |s| (format!("p{p}_s{s}"), format!("p{p}"))))
            .collect()
    }

    #[test]
    fn five_pairs_four_to_one() {
        let split = loso_split(&corpus(5, 4)).unwrap();
        assert_eq!(split.folds.len(), 5);
        for f in &split.folds {
            assert_eq!(f.train_ids.len(), 16);
            assert_eq!(f.test_ids.len(), 4);
            assert_eq!(f.train_ids.len(), 4 * f.test_ids.len());
        }
    }

    #[test]
    fn folds_partition_and_enumerate() {
        let c = corpus(3, 2);
        let split = loso_split(&c).unwrap();
        assert_eq!(split.folds.len(), 3);
        let expected = [
            vec!["p0_s0", "p0_s1"],
            vec!["p1_s0", "p1_s1"],
            vec!["p2_s0", "p2_s1"],
        ];
        let mut seen = BTreeSet::new();
        for (f, exp) in split.folds.iter().zip(&expected) {
            assert_eq!(&f.test_ids, exp);
            for id in &f.test_ids {
                assert!(seen.insert(id.clone()), "session tested twice");
                assert!(!f.train_ids.contains(id));
            }
            assert_eq!(f.train_ids.len() + f.test_ids.len(), c.len());
        }
        assert_eq!(seen.len(), c.len());
    }

    #[test]
    fn single_pair_rejected() {
        assert!(loso_split(&corpus(1, 3)).is_err());
    }
}
