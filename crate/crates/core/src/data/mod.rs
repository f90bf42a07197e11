//! Review ingestion, vocabularies, labeled sample generation and the
//! synthetic corpus used for desk-scale checks.

mod ingest;
mod pipeline;
mod sample;
mod sampling;
mod split;
mod stats;
mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

pub use ingest::{
    assign_price_buckets, filter_small_categories, ingest, read_metadata, read_reviews, retain_covered,
    DEFAULT_PRICE_BINS,
};
pub use pipeline::{prepare, sort_events, PrepareOptions, SampleMode};
pub use sample::{read_samples, write_samples, Sample, SampleSet};
pub use sampling::{generate_dien_samples, generate_din_samples, SamplingOptions, DIEN_MIN_REVIEWS};
pub use split::{split_train_test, subsample, SubsampleMode};
pub use stats::{stats, DatasetStats};
pub use synth::{category_name, item_name, synth_generate, write_metadata_jsonl, write_reviews_jsonl, SynthConfig};
pub use vocab::{Catalog, Namespace, Vocabulary, ITEM_NS, USER_NS};

/// Attribute key of the category tag.
pub const CATEGORY: &str = "category";
pub const BRAND: &str = "brand";
pub const PRICE_BUCKET: &str = "price_bucket";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("unknown {namespace} id `{id}`")]
    UnknownId { namespace: String, id: String },
    #[error("item `{item}` has no `{key}` attribute")]
    MissingAttribute { item: String, key: String },
    #[error("user index {user} has reviewed every item; no negative can be drawn")]
    NoNegative { user: u32 },
    #[error("fraction {0} outside its allowed range")]
    Fraction(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One implicit-feedback interaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReviewEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// Item attributes keyed by dimension name (`category`, `brand`, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct ItemMeta {
    pub item_id: String,
    pub attributes: BTreeMap<String, String>,
    pub price: Option<f64>,
}

impl ItemMeta {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}
