use crate::data::Sample;
use crate::hierarchy::{build_tree, HierarchySpec};
use crate::tensor::Segments;

use super::{ModelError, Result};

/// Groups of one attribute level across a whole batch.
#[derive(Clone, Debug)]
pub struct LevelLayout {
    pub key: String,
    /// Members (flattened positions at the lowest level, child groups above)
    /// to the groups of this level.
    pub members: Segments,
    pub sample: Vec<usize>,
    pub attribute: Vec<u32>,
    /// Unpadded history positions covered by each group.
    pub positions: Vec<Vec<usize>>,
    /// Index of each group among its sample's groups at this level.
    pub local: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DimensionLayout {
    pub name: String,
    /// Bottom-up attribute levels.
    pub levels: Vec<LevelLayout>,
    /// Top-level groups to samples.
    pub top: Segments,
}

/// Samples padded to the longest history in the batch, with the grouping
/// structure of every dimension flattened into segment maps.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// Padded history length.
    pub t: usize,
    /// `size * t` item indices, 0 at padding.
    pub items: Vec<usize>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub users: Vec<usize>,
    pub targets: Vec<usize>,
    /// Per sample-file attribute key, the target attribute of each sample.
    pub target_attrs: Vec<Vec<usize>>,
    pub attr_keys: Vec<String>,
    pub labels: Vec<f64>,
    /// Unmasked positions to their sample.
    pub by_sample: Segments,
    /// Target index repeated for every flattened position.
    pub position_targets: Vec<usize>,
    pub dimensions: Vec<DimensionLayout>,
}

impl Batch {
    /// Histories longer than `t_max` keep their most recent entries.
    pub fn new(samples: &[&Sample], attr_keys: &[String], spec: &HierarchySpec, t_max: usize) -> Result<Batch> {
        let size = samples.len();
        if size == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let clip = |s: &Sample| s.history.len().saturating_sub(t_max);
        for (i, s) in samples.iter().enumerate() {
            if s.history.is_empty() {
                return Err(ModelError::EmptyHistory { sample: i });
            }
            if s.history_attrs.len() != attr_keys.len() || s.target_attrs.len() != attr_keys.len() {
                return Err(ModelError::Config(format!(
                    "sample {i} carries {} attribute sequences for {} keys",
                    s.history_attrs.len(),
                    attr_keys.len()
                )));
            }
        }
        let lengths: Vec<usize> = samples.iter().map(|s| s.history.len() - clip(s)).collect();
        let t = lengths.iter().copied().max().unwrap_or(1).min(t_max.max(1));

        let mut items = vec![0usize; size * t];
        let mut mask = vec![false; size * t];
        let mut by_sample = vec![None; size * t];
        for (b, s) in samples.iter().enumerate() {
            for (k, &it) in s.history[clip(s)..].iter().enumerate() {
                items[b * t + k] = it as usize;
                mask[b * t + k] = true;
                by_sample[b * t + k] = Some(b);
            }
        }
        let targets: Vec<usize> = samples.iter().map(|s| s.target as usize).collect();
        let position_targets = (0..size * t).map(|r| targets[r / t]).collect();

        let mut dimensions: Vec<DimensionLayout> = spec
            .dimensions
            .iter()
            .map(|d| DimensionLayout {
                name: d.name.clone(),
                levels: d
                    .attribute_levels()
                    .iter()
                    .map(|k| LevelLayout {
                        key: k.clone(),
                        members: Segments::default(),
                        sample: Vec::new(),
                        attribute: Vec::new(),
                        positions: Vec::new(),
                        local: Vec::new(),
                    })
                    .collect(),
                top: Segments::default(),
            })
            .collect();
        // Raw segment ids before validation.
        let mut member_ids: Vec<Vec<Vec<Option<usize>>>> = spec
            .dimensions
            .iter()
            .map(|d| {
                let mut v = vec![vec![None; size * t]];
                v.extend((1..d.attribute_levels().len()).map(|_| Vec::new()));
                v
            })
            .collect();
        let mut top_ids: Vec<Vec<Option<usize>>> = vec![Vec::new(); spec.dimensions.len()];

        for (b, s) in samples.iter().enumerate() {
            let start = clip(s);
            let len = lengths[b];
            let seqs: Vec<&[u32]> = s.history_attrs.iter().map(|a| &a[start..]).collect();
            let trees = build_tree(
                spec,
                |key| attr_keys.iter().position(|k| k == key).map(|i| seqs[i]),
                &vec![true; len],
            )?;
            for (di, tree) in trees.iter().enumerate() {
                let layout = &mut dimensions[di];
                let ids = &mut member_ids[di];
                let depth = tree.levels.len();
                let offsets: Vec<usize> = layout.levels.iter().map(|l| l.sample.len()).collect();
                for (j, lvl) in tree.levels.iter().enumerate() {
                    for (g, group) in lvl.groups.iter().enumerate() {
                        let global = offsets[j] + g;
                        let out = &mut layout.levels[j];
                        out.sample.push(b);
                        out.attribute.push(group.attribute);
                        out.positions.push(group.positions.clone());
                        out.local.push(g);
                        if j == 0 {
                            for &p in &group.positions {
                                ids[0][b * t + p] = Some(global);
                            }
                        }
                        match lvl.parent[g] {
                            Some(parent) => ids[j + 1].push(Some(offsets[j + 1] + parent)),
                            None => {
                                debug_assert_eq!(j + 1, depth);
                                top_ids[di].push(Some(b));
                            }
                        }
                    }
                }
            }
        }
        for (di, layout) in dimensions.iter_mut().enumerate() {
            let ids = std::mem::take(&mut member_ids[di]);
            for (j, ids) in ids.into_iter().enumerate() {
                let count = layout.levels[j].sample.len();
                layout.levels[j].members = Segments::new(ids, count)?;
            }
            layout.top = Segments::new(std::mem::take(&mut top_ids[di]), size)?;
        }

        Ok(Batch {
            size,
            t,
            items,
            mask,
            lengths,
            users: samples.iter().map(|s| s.user as usize).collect(),
            targets,
            target_attrs: (0..attr_keys.len())
                .map(|k| samples.iter().map(|s| s.target_attrs[k] as usize).collect())
                .collect(),
            attr_keys: attr_keys.to_vec(),
            labels: samples.iter().map(|s| s.label as f64).collect(),
            by_sample: Segments::new(by_sample, size)?,
            position_targets,
            dimensions,
        })
    }

    pub fn key_index(&self, key: &str) -> Option<usize> {
        self.attr_keys.iter().position(|k| k == key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Dimension;

    fn sample(history: &[u32], cats: &[u32], brands: &[u32]) -> Sample {
        Sample {
            label: 1,
            user: 1,
            target: 9,
            target_attrs: vec![1, 1],
            history: history.to_vec(),
            history_attrs: vec![cats.to_vec(), brands.to_vec()],
        }
    }

    #[test]
    fn layout_links_levels_across_samples() {
        let keys = vec!["category".to_string(), "brand".to_string()];
        let spec = HierarchySpec {
            dimensions: vec![Dimension::new("cb", &["item", "brand", "category"])],
        };
        let a = sample(&[1, 2, 3], &[1, 2, 1], &[5, 6, 5]);
        let b = sample(&[4, 5], &[2, 2], &[7, 8]);
        let batch = Batch::new(&[&a, &b], &keys, &spec, 50).unwrap();
        assert_eq!(batch.t, 3);
        assert_eq!(batch.mask, vec![true, true, true, true, true, false]);
        let dim = &batch.dimensions[0];
        // Brand groups: a{5:[0,2], 6:[1]}, b{7:[0], 8:[1]}.
        assert_eq!(dim.levels[0].sample, vec![0, 0, 1, 1]);
        assert_eq!(
            dim.levels[0].members.ids(),
            &[Some(0), Some(1), Some(0), Some(2), Some(3), None]
        );
        // Category groups: a{1, 2}, b{2}.
        assert_eq!(dim.levels[1].members.ids(), &[Some(0), Some(1), Some(2), Some(2)]);
        assert_eq!(dim.top.ids(), &[Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn truncates_to_recent_and_rejects_empty() {
        let keys = vec!["category".to_string(), "brand".to_string()];
        let spec = HierarchySpec::single("category");
        let a = sample(&[1, 2, 3, 4], &[1, 1, 2, 2], &[1, 1, 1, 1]);
        let batch = Batch::new(&[&a], &keys, &spec, 2).unwrap();
        assert_eq!(batch.items, vec![3, 4]);
        assert_eq!(batch.dimensions[0].levels[0].attribute, vec![2]);
        let empty = sample(&[], &[], &[]);
        assert!(matches!(
            Batch::new(&[&empty], &keys, &spec, 2),
            Err(ModelError::EmptyHistory { sample: 0 })
        ));
    }
}
