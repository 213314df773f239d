//! Instance-level train/dev/test partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-split counters, serialized as `{"train", "dev", "test"}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    pub fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Dev => self.dev += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// 80/10/10 by rounding: `dev = test = max(1, round(0.1 n))` when `n ≥ 3`,
/// otherwise everything goes to train.
pub fn split_sizes(n: usize) -> SplitCounts {
    if n < 3 {
        return SplitCounts {
            train: n,
            dev: 0,
            test: 0,
        };
    }
    let held = ((0.1 * n as f64).round() as usize).max(1);
    SplitCounts {
        train: n - 2 * held,
        dev: held,
        test: held,
    }
}

/// `(lf, base_lemma, collocate_lemma)`.
pub type InstanceKey = (String, String, String);

/// Partitions unique instances LF by LF. Within an LF the sorted keys are
/// shuffled with a generator seeded from `seed`; test takes the first
/// slice, dev the next, train the rest.
pub fn assign_instances(keys: &BTreeSet<InstanceKey>, seed: u64) -> BTreeMap<InstanceKey, Split> {
    let mut by_lf: BTreeMap<&str, Vec<&InstanceKey>> = BTreeMap::new();
    for k in keys {
        by_lf.entry(&k.0).or_default().push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for group in by_lf.values_mut() {
        group.shuffle(&mut rng);
        let sizes = split_sizes(group.len());
        for (i, k) in group.iter().enumerate() {
            let split = if i < sizes.test {
                Split::Test
            } else if i < sizes.test + sizes.dev {
                Split::Dev
            } else {
                Split::Train
            };
            out.insert((*k).clone(), split);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(lf: &str, n: usize) -> BTreeSet<InstanceKey> {
        (0..n)
            .map(|i| (lf.to_string(), format!("b{i}"), format!("c{i}")))
            .collect()
    }

    #[test]
    fn rounding_rule() {
        let s = |train, dev, test| SplitCounts { train, dev, test };
        assert_eq!(split_sizes(10), s(8, 1, 1));
        assert_eq!(split_sizes(3), s(1, 1, 1));
        assert_eq!(split_sizes(2), s(2, 0, 0));
        assert_eq!(split_sizes(0), s(0, 0, 0));
        assert_eq!(split_sizes(15), s(11, 2, 2));
        assert_eq!(split_sizes(14), s(12, 1, 1));
        assert_eq!(split_sizes(100), s(80, 10, 10));
    }

    #[test]
    fn assignment_follows_sizes_per_lf() {
        let mut all = keys("Magn", 10);
        all.extend(keys("Oper1", 3));
        all.extend(keys("Real1", 1));
        let a = assign_instances(&all, 13);
        assert_eq!(a.len(), 14);
        for (lf, n) in [("Magn", 10), ("Oper1", 3), ("Real1", 1)] {
            let mut c = SplitCounts::default();
            a.iter()
                .filter(|(k, _)| k.0 == lf)
                .for_each(|(_, &s)| c.bump(s));
            assert_eq!(c, split_sizes(n));
        }
    }

    #[test]
    fn assignment_is_seeded() {
        let all = keys("Magn", 30);
        assert_eq!(assign_instances(&all, 1), assign_instances(&all, 1));
        assert_ne!(assign_instances(&all, 1), assign_instances(&all, 2));
    }
}
