use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{DataError, ItemMeta, Result, ReviewEvent, BRAND, CATEGORY, PRICE_BUCKET};

pub const DEFAULT_PRICE_BINS: usize = 10;

#[derive(Deserialize)]
struct RawReview {
    #[serde(rename = "reviewerID")]
    reviewer_id: Option<String>,
    asin: Option<String>,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: Option<i64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCategories {
    Paths(Vec<Vec<String>>),
    Flat(Vec<String>),
}

#[derive(Deserialize)]
struct RawMeta {
    asin: Option<String>,
    categories: Option<RawCategories>,
    brand: Option<String>,
    price: Option<f64>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads both files; events come back sorted per user by timestamp
/// (stable, so ties keep input order) and metas deduplicated, last wins.
pub fn ingest(reviews: &Path, metadata: &Path) -> Result<(Vec<ReviewEvent>, Vec<ItemMeta>)> {
    let events = read_reviews(open(reviews)?)?;
    let mut metas = read_metadata(open(metadata)?)?;
    assign_price_buckets(&mut metas, DEFAULT_PRICE_BINS);
    Ok((events, metas))
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(DataError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })),
    })
}

fn non_empty(line: usize, field: &'static str, v: Option<String>) -> Result<String> {
    match v {
        None => Err(DataError::MissingField { line, field }),
        Some(s) if s.is_empty() => Err(DataError::Malformed {
            line,
            message: format!("`{field}` is empty"),
        }),
        Some(s) => Ok(s),
    }
}

pub fn read_reviews<R: BufRead>(reader: R) -> Result<Vec<ReviewEvent>> {
    let mut events = Vec::new();
    for entry in lines(reader) {
        let (line, text) = entry?;
        let raw: RawReview = serde_json::from_str(&text).map_err(|e| DataError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let user_id = non_empty(line, "reviewerID", raw.reviewer_id)?;
        let item_id = non_empty(line, "asin", raw.asin)?;
        let timestamp = raw.unix_review_time.ok_or(DataError::MissingField {
            line,
            field: "unixReviewTime",
        })?;
        if timestamp < 0 {
            return Err(DataError::Malformed {
                line,
                message: format!("negative unixReviewTime {timestamp}"),
            });
        }
        events.push(ReviewEvent {
            user_id,
            item_id,
            timestamp,
        });
    }
    super::sort_events(&mut events);
    Ok(events)
}

/// Parses metadata records. The category tag is the most specific entry of
/// the first listed category path.
pub fn read_metadata<R: BufRead>(reader: R) -> Result<Vec<ItemMeta>> {
    let mut metas: Vec<ItemMeta> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for entry in lines(reader) {
        let (line, text) = entry?;
        let raw: RawMeta = serde_json::from_str(&text).map_err(|e| DataError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let item_id = non_empty(line, "asin", raw.asin)?;
        let category = match raw.categories {
            Some(RawCategories::Paths(p)) => p.into_iter().next().and_then(|path| path.into_iter().last()),
            Some(RawCategories::Flat(f)) => f.into_iter().last(),
            None => None,
        }
        .filter(|c| !c.is_empty())
        .ok_or(DataError::MissingField {
            line,
            field: "categories",
        })?;
        let mut attributes = BTreeMap::new();
        attributes.insert(CATEGORY.to_string(), category);
        if let Some(b) = raw.brand.filter(|b| !b.is_empty()) {
            attributes.insert(BRAND.to_string(), b);
        }
        let meta = ItemMeta {
            item_id: item_id.clone(),
            attributes,
            price: raw.price.filter(|p| p.is_finite()),
        };
        match slot.get(&item_id) {
            Some(&i) => metas[i] = meta,
            None => {
                slot.insert(item_id, metas.len());
                metas.push(meta);
            }
        }
    }
    Ok(metas)
}

/// Adds a `price_bucket` attribute from quantile bins over all priced items.
/// Equal prices share a bucket.
pub fn assign_price_buckets(metas: &mut [ItemMeta], bins: usize) {
    let mut prices: Vec<f64> = metas.iter().filter_map(|m| m.price).collect();
    if prices.is_empty() || bins == 0 {
        return;
    }
    prices.sort_by(f64::total_cmp);
    let n = prices.len();
    for m in metas.iter_mut() {
        if let Some(p) = m.price {
            let below = prices.partition_point(|&q| q < p);
            let bucket = (below * bins / n).min(bins - 1);
            m.attributes.insert(PRICE_BUCKET.to_string(), format!("p{bucket}"));
        }
    }
}

/// Keeps items whose category holds strictly more than `min_items` items.
/// Items without a category tag are dropped.
pub fn filter_small_categories(metas: Vec<ItemMeta>, min_items: usize) -> Vec<ItemMeta> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for m in &metas {
        if let Some(c) = m.attribute(CATEGORY) {
            *counts.entry(c.to_string()).or_default() += 1;
        }
    }
    metas
        .into_iter()
        .filter(|m| m.attribute(CATEGORY).is_some_and(|c| counts[c] > min_items))
        .collect()
}

/// Drops events whose item has no metadata or lacks one of `keys`.
pub fn retain_covered(events: Vec<ReviewEvent>, metas: &[ItemMeta], keys: &[String]) -> Vec<ReviewEvent> {
    let covered: HashSet<&str> = metas
        .iter()
        .filter(|m| keys.iter().all(|k| m.attributes.contains_key(k)))
        .map(|m| m.item_id.as_str())
        .collect();
    events
        .into_iter()
        .filter(|e| covered.contains(e.item_id.as_str()))
        .collect()
}
