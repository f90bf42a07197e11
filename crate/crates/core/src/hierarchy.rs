//! Interest hierarchies: which attribute keys group a behavior history, per
//! dimension, and the nested partitions of history positions they induce.
//!
//! A dimension lists its levels bottom-up. Level 0 is always the item level;
//! level `j > 0` names an attribute key. Groups at level `j` are keyed by the
//! attribute path from `j` to the top, so they always refine level `j + 1`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the implicit bottom level.
pub const ITEM_LEVEL: &str = "item";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("hierarchy has no dimensions")]
    NoDimensions,
    #[error("dimension `{0}` needs depth >= 2 with `item` as its first level")]
    BadDepth(String),
    #[error("dimension `{dimension}` repeats level `{level}`")]
    DuplicateLevel { dimension: String, level: String },
    #[error("missing attribute sequence for dimension `{dimension}` level `{level}`")]
    MissingAttribute { dimension: String, level: String },
    #[error("attribute sequence length {actual} does not match history length {expected}")]
    Misaligned { expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub levels: Vec<String>,
}

impl Dimension {
    pub fn new(name: &str, levels: &[&str]) -> Self {
        Dimension {
            name: name.to_string(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Attribute keys above the item level, bottom-up.
    pub fn attribute_levels(&self) -> &[String] {
        &self.levels[1..]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySpec {
    pub dimensions: Vec<Dimension>,
}

impl HierarchySpec {
    /// The two-level, one-dimension case: items grouped by category.
    pub fn single(key: &str) -> Self {
        HierarchySpec {
            dimensions: vec![Dimension::new(key, &[ITEM_LEVEL, key])],
        }
    }

    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.dimensions.is_empty() {
            return Err(HierarchyError::NoDimensions);
        }
        for d in &self.dimensions {
            if d.depth() < 2 || d.levels[0] != ITEM_LEVEL {
                return Err(HierarchyError::BadDepth(d.name.clone()));
            }
            for (i, l) in d.levels.iter().enumerate() {
                if d.levels[..i].contains(l) || (i > 0 && l == ITEM_LEVEL) {
                    return Err(HierarchyError::DuplicateLevel {
                        dimension: d.name.clone(),
                        level: l.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Every attribute key referenced by any dimension, in first-use order.
    pub fn attribute_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = Vec::new();
        for d in &self.dimensions {
            for l in d.attribute_levels() {
                if !keys.contains(l) {
                    keys.push(l.clone());
                }
            }
        }
        keys
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub attribute: u32,
    pub positions: Vec<usize>,
}

/// Partition of the unmasked history positions by one attribute sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupedBehaviors {
    pub groups: Vec<Group>,
}

impl GroupedBehaviors {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// One group per distinct unmasked attribute value, positions in original
/// order, groups in order of first appearance.
pub fn group_positions(attrs: &[u32], mask: &[bool]) -> GroupedBehaviors {
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (pos, (&a, &m)) in attrs.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let g = *slot.entry(a).or_insert_with(|| {
            groups.push(Group {
                attribute: a,
                positions: Vec::new(),
            });
            groups.len() - 1
        });
        groups[g].positions.push(pos);
    }
    GroupedBehaviors { groups }
}

/// Groups of one attribute level inside a dimension tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelGroups {
    /// Attribute key of this level.
    pub key: String,
    /// Groups keyed by the attribute path from this level upward.
    pub groups: Vec<Group>,
    /// For each group, the index of its enclosing group one level up;
    /// `None` at the top level.
    pub parent: Vec<Option<usize>>,
    /// For each group, the indices of its child groups one level down;
    /// empty at the lowest attribute level (whose children are positions).
    pub children: Vec<Vec<usize>>,
}

/// Nested grouping of one sample's history for one dimension, bottom-up:
/// `levels[0]` is the lowest attribute level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimensionTree {
    pub dimension: String,
    pub levels: Vec<LevelGroups>,
}

impl DimensionTree {
    pub fn top(&self) -> &LevelGroups {
        self.levels.last().expect("depth >= 2")
    }
}

/// Builds one tree per dimension. `attrs` maps an attribute key to the
/// history-aligned attribute sequence.
pub fn build_tree<'a>(
    spec: &HierarchySpec,
    attrs: impl Fn(&str) -> Option<&'a [u32]>,
    mask: &[bool],
) -> Result<Vec<DimensionTree>, HierarchyError> {
    spec.validate()?;
    spec.dimensions
        .iter()
        .map(|dim| {
            let seqs = dim
                .attribute_levels()
                .iter()
                .map(|key| {
                    let s = attrs(key).ok_or_else(|| HierarchyError::MissingAttribute {
                        dimension: dim.name.clone(),
                        level: key.clone(),
                    })?;
                    if s.len() != mask.len() {
                        return Err(HierarchyError::Misaligned {
                            expected: mask.len(),
                            actual: s.len(),
                        });
                    }
                    Ok(s)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(dimension_tree(&dim.name, dim.attribute_levels(), &seqs, mask))
        })
        .collect()
}

fn dimension_tree(name: &str, keys: &[String], seqs: &[&[u32]], mask: &[bool]) -> DimensionTree {
    let depth = seqs.len();
    let mut levels: Vec<LevelGroups> = Vec::with_capacity(depth);
    // Group slot per position, per level, to link parents afterwards.
    let mut slot_of: Vec<Vec<usize>> = Vec::with_capacity(depth);
    for j in 0..depth {
        let mut slot: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        let mut pos_slot = vec![usize::MAX; mask.len()];
        for pos in (0..mask.len()).filter(|&p| mask[p]) {
            let path: Vec<u32> = seqs[j..].iter().map(|s| s[pos]).collect();
            let g = *slot.entry(path).or_insert_with(|| {
                groups.push(Group {
                    attribute: seqs[j][pos],
                    positions: Vec::new(),
                });
                groups.len() - 1
            });
            groups[g].positions.push(pos);
            pos_slot[pos] = g;
        }
        let n = groups.len();
        levels.push(LevelGroups {
            key: keys[j].clone(),
            groups,
            parent: vec![None; n],
            children: vec![Vec::new(); n],
        });
        slot_of.push(pos_slot);
    }
    for j in 0..depth.saturating_sub(1) {
        for g in 0..levels[j].groups.len() {
            let first = levels[j].groups[g].positions[0];
            let p = slot_of[j + 1][first];
            levels[j].parent[g] = Some(p);
            levels[j + 1].children[p].push(g);
        }
    }
    DimensionTree {
        dimension: name.to_string(),
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: u32 = 1;
    const B: u32 = 2;
    const C: u32 = 3;

    #[test]
    fn groups_by_first_appearance() {
        let g = group_positions(&[A, B, A], &[true; 3]);
        assert_eq!(
            g.groups,
            vec![
                Group {
                    attribute: A,
                    positions: vec![0, 2]
                },
                Group {
                    attribute: B,
                    positions: vec![1]
                },
            ]
        );
        assert_eq!(group_positions(&[A, A, A], &[true; 3]).len(), 1);
        let masked = group_positions(&[A, B, C], &[true, true, false]);
        assert_eq!(masked.len(), 2);
        assert!(masked.groups.iter().all(|g| !g.positions.contains(&2)));
        assert!(group_positions(&[A, B], &[false, false]).is_empty());
    }

    #[test]
    fn depth_two_matches_group_positions() {
        let cats = [A, B, A, C];
        let mask = [true, true, true, false];
        let spec = HierarchySpec::single("category");
        let trees = build_tree(&spec, |k| (k == "category").then_some(&cats[..]), &mask).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].levels.len(), 1);
        assert_eq!(trees[0].top().groups, group_positions(&cats, &mask).groups);
        assert!(trees[0].top().parent.iter().all(Option::is_none));
    }

    #[test]
    fn depth_three_nests_brands_in_categories() {
        // Toy history of six items: 2 categories x 2 brands.
        //   pos:   0   1   2   3   4   5
        //   cat:   1   1   2   1   2   2
        //   brand: 10  11  10  10  12  12
        // Brand groups keyed by (brand, category):
        //   (10,1):[0,3] (11,1):[1] (10,2):[2] (12,2):[4,5]
        let cat = [1, 1, 2, 1, 2, 2];
        let brand = [10, 11, 10, 10, 12, 12];
        let spec = HierarchySpec {
            dimensions: vec![Dimension::new("category", &["item", "brand", "category"])],
        };
        let lookup = |k: &str| match k {
            "category" => Some(&cat[..]),
            "brand" => Some(&brand[..]),
            _ => None,
        };
        let tree = &build_tree(&spec, lookup, &[true; 6]).unwrap()[0];
        let brands = &tree.levels[0];
        let cats = &tree.levels[1];
        assert_eq!(brands.groups.len(), 4);
        assert_eq!(cats.groups.len(), 2);
        let pos: Vec<_> = brands.groups.iter().map(|g| g.positions.clone()).collect();
        assert_eq!(pos, vec![vec![0, 3], vec![1], vec![2], vec![4, 5]]);
        assert_eq!(brands.parent, vec![Some(0), Some(0), Some(1), Some(1)]);
        assert_eq!(cats.children, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn two_dimensions_build_independent_trees() {
        let cat = [1, 2, 1];
        let price = [5, 5, 6];
        let spec = HierarchySpec {
            dimensions: vec![
                Dimension::new("category", &["item", "category"]),
                Dimension::new("price", &["item", "price_bucket"]),
            ],
        };
        let lookup = |k: &str| match k {
            "category" => Some(&cat[..]),
            "price_bucket" => Some(&price[..]),
            _ => None,
        };
        let trees = build_tree(&spec, lookup, &[true; 3]).unwrap();
        assert_eq!(trees[0].top().groups, group_positions(&cat, &[true; 3]).groups);
        assert_eq!(trees[1].top().groups, group_positions(&price, &[true; 3]).groups);
    }

    #[test]
    fn missing_attribute_names_dimension_and_level() {
        let spec = HierarchySpec {
            dimensions: vec![Dimension::new("category", &["item", "brand", "category"])],
        };
        let cat = [1u32];
        let err = build_tree(&spec, |k| (k == "category").then_some(&cat[..]), &[true]).unwrap_err();
        assert_eq!(
            err,
            HierarchyError::MissingAttribute {
                dimension: "category".into(),
                level: "brand".into()
            }
        );
    }

    #[test]
    fn validation() {
        assert!(HierarchySpec { dimensions: vec![] }.validate().is_err());
        let shallow = HierarchySpec {
            dimensions: vec![Dimension::new("c", &["item"])],
        };
        assert!(matches!(shallow.validate(), Err(HierarchyError::BadDepth(_))));
        let dup = HierarchySpec {
            dimensions: vec![Dimension::new("c", &["item", "category", "category"])],
        };
        assert!(matches!(dup.validate(), Err(HierarchyError::DuplicateLevel { .. })));
    }

    proptest! {
        #[test]
        fn levels_partition_their_parents(
            cats in proptest::collection::vec(0u32..3, 1..20),
            brands in proptest::collection::vec(0u32..3, 20),
            mask in proptest::collection::vec(any::<bool>(), 20),
        ) {
            let n = cats.len();
            let brand = &brands[..n];
            let mask = &mask[..n];
            let spec = HierarchySpec {
                dimensions: vec![Dimension::new("d", &["item", "brand", "category"])],
            };
            let lookup = |k: &str| match k {
                "category" => Some(&cats[..]),
                "brand" => Some(brand),
                _ => None,
            };
            let tree = &build_tree(&spec, lookup, mask).unwrap()[0];
            let unmasked: Vec<usize> = (0..n).filter(|&p| mask[p]).collect();
            for level in &tree.levels {
                let mut all: Vec<usize> = level.groups.iter().flat_map(|g| g.positions.clone()).collect();
                prop_assert!(level.groups.iter().all(|g| !g.positions.is_empty()));
                all.sort_unstable();
                prop_assert_eq!(&all, &unmasked);
            }
            // Every child group's positions sit inside its parent's.
            let (lo, hi) = (&tree.levels[0], &tree.levels[1]);
            for (g, p) in lo.groups.iter().zip(&lo.parent) {
                let parent = &hi.groups[p.unwrap()];
                prop_assert!(g.positions.iter().all(|x| parent.positions.contains(x)));
            }
        }

        #[test]
        fn grouping_is_permutation_equivariant(
            attrs in proptest::collection::vec(0u32..4, 1..16),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = attrs.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // permuted[i] = attrs[perm[i]]
            let permuted: Vec<u32> = perm.iter().map(|&i| attrs[i]).collect();
            let g0 = group_positions(&attrs, &vec![true; n]);
            let g1 = group_positions(&permuted, &vec![true; n]);
            let as_sets = |g: &GroupedBehaviors, map: &dyn Fn(usize) -> usize| {
                let mut v: Vec<(u32, Vec<usize>)> = g.groups.iter().map(|gr| {
                    let mut p: Vec<usize> = gr.positions.iter().map(|&x| map(x)).collect();
                    p.sort_unstable();
                    (gr.attribute, p)
                }).collect();
                v.sort();
                v
            };
            prop_assert_eq!(as_sets(&g0, &|x| x), as_sets(&g1, &|x| perm[x]));
        }
    }
}
