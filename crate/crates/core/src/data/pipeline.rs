use serde::{Deserialize, Serialize};

use super::{
    filter_small_categories, generate_dien_samples, generate_din_samples, retain_covered, Catalog, ItemMeta, Result,
    ReviewEvent, SampleSet, SamplingOptions,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Every prefix of a user's reviews predicts the next one.
    #[default]
    Din,
    /// One record per user with enough reviews.
    Dien,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub mode: SampleMode,
    pub sampling: SamplingOptions,
    /// Categories with at most this many items are dropped; 0 keeps all.
    pub min_category_items: usize,
    pub attr_keys: Vec<String>,
}

/// Sorts events per user by time; ties keep their input order.
pub fn sort_events(events: &mut [ReviewEvent]) {
    events.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));
}

/// Filtering, indexing and labeled sample generation in one pass.
pub fn prepare(
    mut events: Vec<ReviewEvent>,
    metas: Vec<ItemMeta>,
    opts: &PrepareOptions,
    seed: u64,
) -> Result<(Catalog, SampleSet)> {
    let metas = if opts.min_category_items > 0 {
        filter_small_categories(metas, opts.min_category_items)
    } else {
        metas
    };
    sort_events(&mut events);
    let events = retain_covered(events, &metas, &opts.attr_keys);
    let catalog = Catalog::build(&events, &metas, &opts.attr_keys)?;
    let samples = match opts.mode {
        SampleMode::Din => generate_din_samples(&events, &catalog, opts.sampling, seed)?,
        SampleMode::Dien => generate_dien_samples(&events, &catalog, opts.sampling.t_max, seed)?,
    };
    Ok((catalog, samples))
}
