use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, ReviewEvent, SampleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsampleMode {
    /// Keep each review independently.
    Events,
    /// Keep whole users.
    Users,
}

/// Seeded shuffle of `keys` and the first `take` of them.
fn pick<T: Ord + Clone + std::hash::Hash>(keys: BTreeSet<T>, take: usize, rng: &mut ChaCha8Rng) -> HashSet<T> {
    let mut keys: Vec<T> = keys.into_iter().collect();
    keys.shuffle(rng);
    keys.truncate(take);
    keys.into_iter().collect()
}

/// Keeps a seeded fraction of the data. Input order is preserved.
pub fn subsample(events: Vec<ReviewEvent>, fraction: f64, mode: SubsampleMode, seed: u64) -> Result<Vec<ReviewEvent>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Fraction(fraction));
    }
    if fraction == 1.0 {
        return Ok(events);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SubsampleMode::Events => Ok(events.into_iter().filter(|_| rng.gen_bool(fraction)).collect()),
        SubsampleMode::Users => {
            let users: BTreeSet<String> = events.iter().map(|e| e.user_id.clone()).collect();
            let take = (fraction * users.len() as f64).round() as usize;
            let kept = pick(users, take, &mut rng);
            Ok(events.into_iter().filter(|e| kept.contains(&e.user_id)).collect())
        }
    }
}

/// User-grouped split: `round(test_fraction * users)` users (at least one on
/// each side when there are two or more) go to test with all their samples.
pub fn split_train_test(set: &SampleSet, test_fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Fraction(test_fraction));
    }
    let users: BTreeSet<u32> = set.samples.iter().map(|s| s.user).collect();
    let n = users.len();
    let mut take = (test_fraction * n as f64).round() as usize;
    if n >= 2 {
        take = take.clamp(1, n - 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test_users = pick(users, take, &mut rng);
    let mut train = SampleSet::new(set.attr_keys.clone());
    let mut test = SampleSet::new(set.attr_keys.clone());
    for s in &set.samples {
        if test_users.contains(&s.user) {
            test.samples.push(s.clone());
        } else {
            train.samples.push(s.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use proptest::prelude::*;

    fn events(users: usize, per_user: usize) -> Vec<ReviewEvent> {
        (0..users)
            .flat_map(|u| {
                (0..per_user).map(move |t| ReviewEvent {
                    user_id: format!("u{u}"),
                    item_id: format!("i{t}"),
                    timestamp: t as i64,
                })
            })
            .collect()
    }

    #[test]
    fn full_fraction_is_identity() {
        let ev = events(4, 3);
        assert_eq!(subsample(ev.clone(), 1.0, SubsampleMode::Events, 9).unwrap(), ev);
        assert_eq!(subsample(ev.clone(), 1.0, SubsampleMode::Users, 9).unwrap(), ev);
    }

    #[test]
    fn half_of_ten_users_keeps_five_complete() {
        let ev = events(10, 4);
        let kept = subsample(ev, 0.5, SubsampleMode::Users, 3).unwrap();
        let users: BTreeSet<&str> = kept.iter().map(|e| e.user_id.as_str()).collect();
        assert_eq!(users.len(), 5);
        for u in users {
            assert_eq!(kept.iter().filter(|e| e.user_id == u).count(), 4);
        }
    }

    #[test]
    fn subsample_is_seeded() {
        let ev = events(30, 5);
        for mode in [SubsampleMode::Events, SubsampleMode::Users] {
            let a = subsample(ev.clone(), 0.3, mode, 11).unwrap();
            assert_eq!(a, subsample(ev.clone(), 0.3, mode, 11).unwrap());
        }
    }

    #[test]
    fn fraction_bounds() {
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(subsample(events(2, 2), f, SubsampleMode::Events, 0).is_err());
        }
        let set = SampleSet::default();
        assert!(split_train_test(&set, 1.0, 0).is_err());
    }

    fn set_for(users: u32, per_user: usize) -> SampleSet {
        let mut set = SampleSet::new(vec![]);
        for u in 1..=users {
            for k in 0..per_user {
                set.samples.push(Sample {
                    label: (k % 2) as u8,
                    user: u,
                    target: k as u32 + 1,
                    target_attrs: vec![],
                    history: vec![1],
                    history_attrs: vec![],
                });
            }
        }
        set
    }

    #[test]
    fn fifth_of_hundred_users_in_test() {
        let (train, test) = split_train_test(&set_for(100, 3), 0.2, 5).unwrap();
        let test_users: BTreeSet<u32> = test.samples.iter().map(|s| s.user).collect();
        assert_eq!(test_users.len(), 20);
        assert_eq!(train.len() + test.len(), 300);
    }

    proptest! {
        #[test]
        fn split_partitions_by_user(users in 1u32..40, per in 1usize..4, f in 0.05f64..0.95, seed in any::<u64>()) {
            let set = set_for(users, per);
            let (train, test) = split_train_test(&set, f, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), set.len());
            let a: HashSet<u32> = train.samples.iter().map(|s| s.user).collect();
            let b: HashSet<u32> = test.samples.iter().map(|s| s.user).collect();
            prop_assert!(a.is_disjoint(&b));
            let again = split_train_test(&set, f, seed).unwrap();
            prop_assert_eq!(again.1, test);
        }
    }
}
