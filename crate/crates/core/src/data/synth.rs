use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ItemMeta, Result, ReviewEvent, BRAND, CATEGORY};

/// Synthetic corpus with a planted category preference per user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub users: usize,
    pub items_per_category: usize,
    pub categories: usize,
    /// Reviews per user.
    pub history_len: usize,
    /// Probability that a review falls in the user's preferred category.
    pub signal_strength: f64,
    /// Brands are nested inside categories, giving a third level to group on.
    pub brands_per_category: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            items_per_category: 300,
            categories: 6,
            history_len: 12,
            signal_strength: 0.9,
            brands_per_category: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("users", self.users),
            ("items_per_category", self.items_per_category),
            ("categories", self.categories),
            ("history_len", self.history_len),
            ("brands_per_category", self.brands_per_category),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(DataError::Config(format!("synth.{name} must be at least 1")));
            }
        }
        if !(self.signal_strength > 0.5 && self.signal_strength <= 1.0) {
            return Err(DataError::Config(format!(
                "synth.signal_strength must be in (0.5, 1], got {}",
                self.signal_strength
            )));
        }
        Ok(())
    }
}

pub fn item_name(category: usize, j: usize) -> String {
    format!("I{category:02}_{j:04}")
}

pub fn category_name(category: usize) -> String {
    format!("cat{category}")
}

/// Events come back in a shuffled emission order; per-user timestamps
/// increase with the draw order, so sorting by (user, time) restores it.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vec<ReviewEvent>, Vec<ItemMeta>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_items = cfg.categories * cfg.items_per_category;

    let mut metas = Vec::with_capacity(n_items);
    for c in 0..cfg.categories {
        for j in 0..cfg.items_per_category {
            let mut attributes = BTreeMap::new();
            attributes.insert(CATEGORY.to_string(), category_name(c));
            attributes.insert(BRAND.to_string(), format!("b{c}_{}", j % cfg.brands_per_category));
            let price = (rng.gen_range(100..100_000) as f64) / 100.0;
            metas.push(ItemMeta {
                item_id: item_name(c, j),
                attributes,
                price: Some(price),
            });
        }
    }

    let mut events = Vec::with_capacity(cfg.users * cfg.history_len);
    for u in 0..cfg.users {
        let user_id = format!("U{u:05}");
        let preferred = rng.gen_range(0..cfg.categories);
        let mut t: i64 = 1_300_000_000 + rng.gen_range(0..86_400);
        for _ in 0..cfg.history_len {
            let idx = if rng.gen_bool(cfg.signal_strength) {
                preferred * cfg.items_per_category + rng.gen_range(0..cfg.items_per_category)
            } else {
                rng.gen_range(0..n_items)
            };
            t += rng.gen_range(1..86_400);
            events.push(ReviewEvent {
                user_id: user_id.clone(),
                item_id: metas[idx].item_id.clone(),
                timestamp: t,
            });
        }
    }
    events.shuffle(&mut rng);
    Ok((events, metas))
}

#[derive(Serialize)]
struct ReviewRecord<'a> {
    #[serde(rename = "reviewerID")]
    reviewer_id: &'a str,
    asin: &'a str,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: i64,
}

#[derive(Serialize)]
struct MetaRecord<'a> {
    asin: &'a str,
    categories: Vec<Vec<&'a str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    brand: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    price: Option<f64>,
}

pub fn write_reviews_jsonl(events: &[ReviewEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let rec = ReviewRecord {
            reviewer_id: &e.user_id,
            asin: &e.item_id,
            unix_review_time: e.timestamp,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    out
}

pub fn write_metadata_jsonl(metas: &[ItemMeta]) -> String {
    let mut out = String::new();
    for m in metas {
        let rec = MetaRecord {
            asin: &m.item_id,
            categories: m.attribute(CATEGORY).map(|c| vec![vec![c]]).unwrap_or_default(),
            brand: m.attribute(BRAND),
            price: m.price,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_metadata, read_reviews};
    use std::collections::{HashMap, HashSet};

    fn small(signal: f64, categories: usize) -> SynthConfig {
        SynthConfig {
            users: 50,
            items_per_category: 20,
            categories,
            history_len: 8,
            signal_strength: signal,
            brands_per_category: 2,
            seed: 42,
        }
    }

    fn category_of(metas: &[ItemMeta]) -> HashMap<&str, &str> {
        metas
            .iter()
            .map(|m| (m.item_id.as_str(), m.attribute(CATEGORY).unwrap()))
            .collect()
    }

    #[test]
    fn full_signal_keeps_each_user_in_one_category() {
        let (events, metas) = synth_generate(&small(1.0, 4)).unwrap();
        let cat = category_of(&metas);
        let mut per_user: HashMap<&str, HashSet<&str>> = HashMap::new();
        for e in &events {
            per_user.entry(&e.user_id).or_default().insert(cat[e.item_id.as_str()]);
        }
        assert_eq!(per_user.len(), 50);
        assert!(per_user.values().all(|c| c.len() == 1));
    }

    #[test]
    fn one_category_shares_one_value() {
        let (_, metas) = synth_generate(&small(0.9, 1)).unwrap();
        let values: HashSet<_> = metas.iter().map(|m| m.attribute(CATEGORY)).collect();
        assert_eq!(values.len(), 1);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (e1, m1) = synth_generate(&small(0.8, 3)).unwrap();
        let (e2, m2) = synth_generate(&small(0.8, 3)).unwrap();
        assert_eq!(write_reviews_jsonl(&e1), write_reviews_jsonl(&e2));
        assert_eq!(write_metadata_jsonl(&m1), write_metadata_jsonl(&m2));
        let mut other = small(0.8, 3);
        other.seed = 43;
        assert_ne!(
            write_reviews_jsonl(&synth_generate(&other).unwrap().0),
            write_reviews_jsonl(&e1)
        );
    }

    #[test]
    fn written_files_parse_back() {
        let (events, metas) = synth_generate(&small(0.9, 3)).unwrap();
        let back = read_reviews(write_reviews_jsonl(&events).as_bytes()).unwrap();
        assert_eq!(back.len(), events.len());
        let mut sorted = events.clone();
        sorted.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));
        assert_eq!(back, sorted);
        assert_eq!(read_metadata(write_metadata_jsonl(&metas).as_bytes()).unwrap(), metas);
    }

    #[test]
    fn timestamps_increase_per_user() {
        let (events, _) = synth_generate(&small(0.9, 3)).unwrap();
        let mut seen: HashMap<&str, HashSet<i64>> = HashMap::new();
        for e in &events {
            assert!(seen.entry(&e.user_id).or_default().insert(e.timestamp));
        }
    }

    #[test]
    fn rejects_weak_signal_and_zero_counts() {
        assert!(synth_generate(&small(0.5, 3)).is_err());
        assert!(synth_generate(&small(1.01, 3)).is_err());
        let mut c = small(0.9, 3);
        c.users = 0;
        assert!(synth_generate(&c).is_err());
    }
}
