use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, Vocabulary, ITEM_NS};
use crate::hierarchy::ITEM_LEVEL;
use crate::models::ForwardTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub dimension: String,
    pub level: String,
    pub attribute: String,
    pub weight: f64,
}

fn label(vocab: &Vocabulary, ns: &str, idx: u32) -> String {
    vocab.name(ns, idx).map_or_else(|| format!("#{idx}"), str::to_string)
}

/// Absolute attention mass per attribute value for every level of every
/// dimension, item level included. Groups or positions sharing a value are
/// summed, so each level's weights add up to one. Within a level, records
/// are sorted by descending weight, ties by attribute string.
pub fn export_attention(sample: &Sample, trace: &ForwardTrace, vocab: &Vocabulary) -> Vec<AttentionRecord> {
    let mut out = Vec::new();
    let start = sample.history.len() - trace.dimensions.first().map_or(0, |d| d.position_weights.len());
    let history = &sample.history[start..];
    for dim in &trace.dimensions {
        let absolute = dim.absolute_weights();
        let mut level_records = |level: &str, pairs: Vec<(String, f64)>| {
            let mut order: Vec<String> = Vec::new();
            let mut mass: HashMap<String, f64> = HashMap::new();
            for (name, w) in pairs {
                if !mass.contains_key(&name) {
                    order.push(name.clone());
                }
                *mass.entry(name).or_insert(0.0) += w;
            }
            let mut recs: Vec<AttentionRecord> = order
                .into_iter()
                .map(|a| AttentionRecord {
                    dimension: dim.name.clone(),
                    level: level.to_string(),
                    weight: mass[&a],
                    attribute: a,
                })
                .collect();
            recs.sort_by(|a, b| {
                b.weight
                    .total_cmp(&a.weight)
                    .then_with(|| a.attribute.cmp(&b.attribute))
            });
            out.extend(recs);
        };

        let lowest = &dim.levels[0];
        let mut items = Vec::with_capacity(history.len());
        for (g, group) in lowest.groups.iter().enumerate() {
            for &p in &group.positions {
                items.push((
                    label(vocab, ITEM_NS, history[p]),
                    dim.position_weights[p] * absolute[0][g],
                ));
            }
        }
        level_records(ITEM_LEVEL, items);
        for (j, lvl) in dim.levels.iter().enumerate() {
            let pairs = lvl
                .groups
                .iter()
                .zip(&absolute[j])
                .map(|(g, &w)| (label(vocab, &lvl.key, g.attribute), w))
                .collect();
            level_records(&lvl.key, pairs);
        }
    }
    out
}
