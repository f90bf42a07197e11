use std::collections::HashSet;

use serde::Serialize;

use super::{SampleSet, CATEGORY};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub goods: usize,
    pub categories: usize,
    pub samples: usize,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "dataset,users,goods,categories,samples";

    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{},{},{},{}",
            self.users, self.goods, self.categories, self.samples
        )
    }
}

/// Counts entities that occur in the samples, as targets or in histories.
/// Categories are counted only when the set carries a `category` key.
pub fn stats(set: &SampleSet) -> DatasetStats {
    let cat = set.key_index(CATEGORY);
    let mut users = HashSet::new();
    let mut goods = HashSet::new();
    let mut categories = HashSet::new();
    for s in &set.samples {
        users.insert(s.user);
        goods.insert(s.target);
        goods.extend(s.history.iter().copied());
        if let Some(k) = cat {
            categories.insert(s.target_attrs[k]);
            categories.extend(s.history_attrs[k].iter().copied());
        }
    }
    DatasetStats {
        users: users.len(),
        goods: goods.len(),
        categories: categories.len(),
        samples: set.len(),
    }
}
