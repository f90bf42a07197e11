use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use super::{DataError, ItemMeta, Result, ReviewEvent};

pub const USER_NS: &str = "user";
pub const ITEM_NS: &str = "item";

/// String to index map; index 0 is padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Namespace {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Namespace {
    fn default() -> Self {
        Self::new()
    }
}

impl Namespace {
    pub fn new() -> Self {
        Namespace {
            names: vec![String::new()],
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }

    pub fn get(&self, s: &str) -> Option<u32> {
        self.index.get(s).copied()
    }

    pub fn name(&self, i: u32) -> Option<&str> {
        (i > 0)
            .then(|| self.names.get(i as usize).map(String::as_str))
            .flatten()
    }

    /// Table size including the padding slot.
    pub fn table_len(&self) -> usize {
        self.names.len()
    }

    /// Number of real entries.
    pub fn len(&self) -> usize {
        self.names.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.names
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, s)| (s.as_str(), i as u32))
    }
}

/// Bidirectional maps for users, items and each attribute key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    namespaces: BTreeMap<String, Namespace>,
}

impl Vocabulary {
    pub fn namespace(&self, ns: &str) -> Option<&Namespace> {
        self.namespaces.get(ns)
    }

    pub fn namespace_mut(&mut self, ns: &str) -> &mut Namespace {
        self.namespaces.entry(ns.to_string()).or_default()
    }

    pub fn lookup(&self, ns: &str, s: &str) -> Result<u32> {
        self.namespaces
            .get(ns)
            .and_then(|n| n.get(s))
            .ok_or_else(|| DataError::UnknownId {
                namespace: ns.to_string(),
                id: s.to_string(),
            })
    }

    pub fn name(&self, ns: &str, i: u32) -> Option<&str> {
        self.namespaces.get(ns).and_then(|n| n.name(i))
    }

    /// Table size (with padding) of a namespace, 1 if absent.
    pub fn table_len(&self, ns: &str) -> usize {
        self.namespaces.get(ns).map_or(1, Namespace::table_len)
    }

    /// `namespace<TAB>string<TAB>index` lines, namespaces sorted, then by index.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::new();
        for (ns, n) in &self.namespaces {
            for (s, i) in n.entries() {
                if s.contains(['\t', '\n', '\r']) {
                    return Err(DataError::Config(format!("{ns} entry {s:?} contains a tab or newline")));
                }
                out.push_str(&format!("{ns}\t{s}\t{i}\n"));
            }
        }
        Ok(out)
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut v = Vocabulary::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| DataError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| DataError::Malformed { line: line_no, message };
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", parts.len())));
            }
            let idx: u32 = parts[2].parse().map_err(|_| bad(format!("bad index `{}`", parts[2])))?;
            let got = v.namespace_mut(parts[0]).insert(parts[1]);
            if got != idx {
                return Err(bad(format!("index {idx} out of sequence (expected {got})")));
            }
        }
        Ok(v)
    }
}

/// Vocabulary plus per-item attribute indices for the active keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub vocab: Vocabulary,
    pub attr_keys: Vec<String>,
    /// `item_attrs[k][item]` is the index of attribute `attr_keys[k]`.
    pub item_attrs: Vec<Vec<u32>>,
}

impl Catalog {
    /// Indexes users and items seen in `events`, plus every value of each
    /// attribute key among those items; each namespace is in sorted order.
    pub fn build(events: &[ReviewEvent], metas: &[ItemMeta], attr_keys: &[String]) -> Result<Self> {
        for k in attr_keys {
            if k == USER_NS || k == ITEM_NS {
                return Err(DataError::Config(format!("attribute key `{k}` is reserved")));
            }
        }
        let by_id: HashMap<&str, &ItemMeta> = metas.iter().map(|m| (m.item_id.as_str(), m)).collect();
        let users: BTreeSet<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
        let items: BTreeSet<&str> = events.iter().map(|e| e.item_id.as_str()).collect();

        let mut vocab = Vocabulary::default();
        for u in &users {
            vocab.namespace_mut(USER_NS).insert(u);
        }
        vocab.namespace_mut(ITEM_NS);
        for it in &items {
            vocab.namespace_mut(ITEM_NS).insert(it);
        }
        let mut values: Vec<Vec<&str>> = Vec::with_capacity(attr_keys.len());
        for k in attr_keys {
            let mut per_item = Vec::with_capacity(items.len());
            for it in &items {
                let v = by_id
                    .get(it)
                    .and_then(|m| m.attribute(k))
                    .ok_or_else(|| DataError::MissingAttribute {
                        item: it.to_string(),
                        key: k.clone(),
                    })?;
                per_item.push(v);
            }
            let sorted: BTreeSet<&str> = per_item.iter().copied().collect();
            let ns = vocab.namespace_mut(k);
            for v in sorted {
                ns.insert(v);
            }
            values.push(per_item);
        }
        let item_attrs = attr_keys
            .iter()
            .zip(&values)
            .map(|(k, per_item)| {
                let ns = vocab.namespace(k).expect("just inserted");
                let mut row = vec![0u32];
                row.extend(per_item.iter().map(|v| ns.get(v).expect("just inserted")));
                row
            })
            .collect();
        Ok(Catalog {
            vocab,
            attr_keys: attr_keys.to_vec(),
            item_attrs,
        })
    }

    pub fn num_items(&self) -> usize {
        self.vocab.namespace(ITEM_NS).map_or(0, Namespace::len)
    }

    pub fn attrs_of(&self, item: u32) -> Vec<u32> {
        self.item_attrs.iter().map(|row| row[item as usize]).collect()
    }
}
