use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One random 80/20 train/test partition of `0..n`. Both index lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` independent 80/20 splits, each from its own seeded sub-stream.
pub fn split_random(n: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k == 0 || n < 2 * k {
        return Err(Error::Contract(format!(
            "cannot draw {k} splits from {n} samples (need at least {})",
            2 * k.max(1)
        )));
    }
    let n_test = (n / 5).max(1);
    Ok((0..k)
        .map(|i| {
            let mut rng = Rng::substream(seed, &format!("split/{i}"));
            let perm = rng.permutation(n);
            let mut test = perm[..n_test].to_vec();
            let mut train = perm[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            Split { train, test }
        })
        .collect())
}

/// Like [`split_random`], but redraws any split rejected by `accept`, up to
/// `max_attempts` draws per split. Attempt 0 reproduces [`split_random`].
pub fn split_random_where(
    n: usize,
    k: usize,
    seed: u64,
    max_attempts: usize,
    accept: impl Fn(&Split) -> bool,
) -> Result<Vec<Split>> {
    let base = split_random(n, k, seed)?;
    let n_test = base[0].test.len();
    base.into_iter()
        .enumerate()
        .map(|(i, first)| {
            if accept(&first) {
                return Ok(first);
            }
            for a in 1..max_attempts {
                let mut rng = Rng::substream(seed, &format!("split/{i}/retry/{a}"));
                let perm = rng.permutation(n);
                let mut test = perm[..n_test].to_vec();
                let mut train = perm[n_test..].to_vec();
                test.sort_unstable();
                train.sort_unstable();
                let s = Split { train, test };
                if accept(&s) {
                    return Ok(s);
                }
            }
            Err(Error::DegenerateLabels(format!(
                "split {i}: no acceptable partition of {n} samples after {max_attempts} draws"
            )))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_partition_indices() {
        for split in split_random(103, 5, 4).unwrap() {
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
            assert_eq!(split.test.len(), 20);
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let a = split_random(1000, 5, 17).unwrap();
        assert_eq!(a, split_random(1000, 5, 17).unwrap());
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(a[i].test, a[j].test);
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(split_random(9, 5, 0).is_err());
        assert!(split_random(10, 5, 0).is_ok());
    }

    #[test]
    fn retry_only_touches_rejected_splits() {
        let plain = split_random(50, 5, 3).unwrap();
        let all = split_random_where(50, 5, 3, 8, |_| true).unwrap();
        assert_eq!(plain, all);
        let avoid = plain[1].test.clone();
        let some = split_random_where(50, 5, 3, 8, |s| s.test != avoid).unwrap();
        assert_eq!(some[0], plain[0]);
        assert_ne!(some[1], plain[1]);
        assert_eq!(some[1].test.len(), 10);
        assert!(split_random_where(50, 5, 3, 8, |_| false).is_err());
    }
}
