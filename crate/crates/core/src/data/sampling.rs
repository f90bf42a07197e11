use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, DataError, Result, ReviewEvent, Sample, SampleSet, ITEM_NS, USER_NS};

/// Users need at least this many reviews to yield a sequence record.
pub const DIEN_MIN_REVIEWS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Histories keep only the most recent `t_max` reviews.
    pub t_max: usize,
    /// Negatives emitted per positive in prefix mode.
    pub neg_ratio: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            t_max: 50,
            neg_ratio: 1,
        }
    }
}

struct UserHistory {
    user: u32,
    items: Vec<u32>,
    seen: HashSet<u32>,
}

fn per_user(events: &[ReviewEvent], catalog: &Catalog) -> Result<Vec<UserHistory>> {
    let mut by_user: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in events {
        let u = catalog.vocab.lookup(USER_NS, &e.user_id)?;
        let i = catalog.vocab.lookup(ITEM_NS, &e.item_id)?;
        by_user.entry(u).or_default().push(i);
    }
    Ok(by_user
        .into_iter()
        .map(|(user, items)| UserHistory {
            user,
            seen: items.iter().copied().collect(),
            items,
        })
        .collect())
}

fn draw_negative(rng: &mut ChaCha8Rng, catalog: &Catalog, h: &UserHistory) -> Result<u32> {
    let n = catalog.num_items() as u32;
    if h.seen.len() as u32 >= n {
        return Err(DataError::NoNegative { user: h.user });
    }
    loop {
        let cand = rng.gen_range(1..=n);
        if !h.seen.contains(&cand) {
            return Ok(cand);
        }
    }
}

fn make_sample(catalog: &Catalog, user: u32, history: &[u32], t_max: usize, target: u32, label: u8) -> Sample {
    let start = history.len().saturating_sub(t_max);
    let history = history[start..].to_vec();
    let history_attrs = catalog
        .item_attrs
        .iter()
        .map(|row| history.iter().map(|&i| row[i as usize]).collect())
        .collect();
    Sample {
        label,
        user,
        target,
        target_attrs: catalog.attrs_of(target),
        history,
        history_attrs,
    }
}

/// Prefix protocol: each user's `(k+1)`-th review is a positive target for
/// the history of the first `k`, for every `k >= 1`, and each positive is
/// followed by `neg_ratio` negatives sharing its history whose targets the
/// user never reviewed.
pub fn generate_din_samples(
    events: &[ReviewEvent],
    catalog: &Catalog,
    opts: SamplingOptions,
    seed: u64,
) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SampleSet::new(catalog.attr_keys.clone());
    for h in per_user(events, catalog)? {
        for k in 1..h.items.len() {
            let prefix = &h.items[..k];
            set.samples
                .push(make_sample(catalog, h.user, prefix, opts.t_max, h.items[k], 1));
            for _ in 0..opts.neg_ratio {
                let neg = draw_negative(&mut rng, catalog, &h)?;
                set.samples
                    .push(make_sample(catalog, h.user, prefix, opts.t_max, neg, 0));
            }
        }
    }
    Ok(set)
}

/// Sequence protocol: one positive (last review as target) and one negative
/// per user with at least [`DIEN_MIN_REVIEWS`] reviews.
pub fn generate_dien_samples(events: &[ReviewEvent], catalog: &Catalog, t_max: usize, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SampleSet::new(catalog.attr_keys.clone());
    for h in per_user(events, catalog)? {
        let n = h.items.len();
        if n < DIEN_MIN_REVIEWS {
            continue;
        }
        let prefix = &h.items[..n - 1];
        set.samples
            .push(make_sample(catalog, h.user, prefix, t_max, h.items[n - 1], 1));
        let neg = draw_negative(&mut rng, catalog, &h)?;
        set.samples.push(make_sample(catalog, h.user, prefix, t_max, neg, 0));
    }
    Ok(set)
}
