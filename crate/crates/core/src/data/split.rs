//! Validation/test split generation over a filtered evaluation pool.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-split size cap.
pub const MAX_SPLIT: usize = 100;

/// Split manifest file contents: `{n, seed, val_indices, test_indices}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub n: usize,
    pub seed: u64,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// `min(100, floor(n / 2))`.
pub fn split_size(n: usize) -> usize {
    MAX_SPLIT.min(n / 2)
}

/// Draws disjoint validation and test index sets of equal size from
/// `[0, n)` with a seeded shuffle. Indices are returned sorted.
pub fn make_splits(n: usize, seed: u64) -> SplitManifest {
    let k = split_size(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut val_indices = order[..k].to_vec();
    let mut test_indices = order[k..2 * k].to_vec();
    val_indices.sort_unstable();
    test_indices.sort_unstable();
    SplitManifest {
        n,
        seed,
        val_indices,
        test_indices,
    }
}

impl SplitManifest {
    /// Indices in neither split; available for training.
    pub fn remainder(&self) -> Vec<usize> {
        let held: BTreeSet<usize> = self.val_indices.iter().chain(&self.test_indices).copied().collect();
        (0..self.n).filter(|i| !held.contains(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_follow_formula() {
        for (n, k) in [(96, 48), (2896, 100), (1, 0), (0, 0), (200, 100), (201, 100), (199, 99)] {
            let m = make_splits(n, 3);
            assert_eq!(m.val_indices.len(), k, "n={n}");
            assert_eq!(m.test_indices.len(), k, "n={n}");
        }
    }

    proptest! {
        #[test]
        fn disjoint_in_range_and_deterministic(n in 0usize..600, seed in any::<u64>()) {
            let a = make_splits(n, seed);
            let b = make_splits(n, seed);
            prop_assert_eq!(&a, &b);
            let val: BTreeSet<_> = a.val_indices.iter().collect();
            prop_assert!(a.test_indices.iter().all(|i| !val.contains(i)));
            prop_assert!(a.val_indices.iter().chain(&a.test_indices).all(|&i| i < n));
            prop_assert_eq!(a.remainder().len(), n - 2 * split_size(n));
        }
    }
}
