use std::io::BufRead;

use super::{DataError, Result};

/// One labeled instance. Histories are stored unpadded (at most `T_max`
/// long); batching pads them with index 0 and a zero mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub label: u8,
    pub user: u32,
    pub target: u32,
    /// Attribute index of the target per key, aligned with `SampleSet::attr_keys`.
    pub target_attrs: Vec<u32>,
    pub history: Vec<u32>,
    /// Per key, one attribute index per history position.
    pub history_attrs: Vec<Vec<u32>>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub attr_keys: Vec<String>,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(attr_keys: Vec<String>) -> Self {
        SampleSet {
            attr_keys,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn key_index(&self, key: &str) -> Option<usize> {
        self.attr_keys.iter().position(|k| k == key)
    }
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join("|")
}

/// Tab-separated sample file with a header naming the attribute keys:
/// `label user_idx target_item_idx target_<k0> history_items history_<k0> [target_<k> history_<k>]...`
pub fn write_samples(set: &SampleSet) -> String {
    let mut out = String::from("label\tuser_idx\ttarget_item_idx");
    for (i, k) in set.attr_keys.iter().enumerate() {
        out.push_str(&format!("\ttarget_{k}"));
        if i == 0 {
            out.push_str("\thistory_items");
        }
        out.push_str(&format!("\thistory_{k}"));
    }
    if set.attr_keys.is_empty() {
        out.push_str("\thistory_items");
    }
    out.push('\n');
    for s in &set.samples {
        out.push_str(&format!("{}\t{}\t{}", s.label, s.user, s.target));
        for k in 0..set.attr_keys.len() {
            out.push('\t');
            out.push_str(&s.target_attrs[k].to_string());
            if k == 0 {
                out.push('\t');
                out.push_str(&join(&s.history));
            }
            out.push('\t');
            out.push_str(&join(&s.history_attrs[k]));
        }
        if set.attr_keys.is_empty() {
            out.push('\t');
            out.push_str(&join(&s.history));
        }
        out.push('\n');
    }
    out
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<SampleSet> {
    let mut lines = reader.lines().enumerate();
    let io = |line: usize| {
        move |e: std::io::Error| DataError::Malformed {
            line,
            message: e.to_string(),
        }
    };
    let header = match lines.next() {
        Some((_, l)) => l.map_err(io(1))?,
        None => return Ok(SampleSet::default()),
    };
    let cols: Vec<&str> = header.split('\t').collect();
    let mut keys = Vec::new();
    for (i, c) in cols.iter().enumerate().skip(3) {
        if let Some(k) = c.strip_prefix("target_") {
            keys.push(k.to_string());
        } else if !c.starts_with("history_") {
            return Err(DataError::Malformed {
                line: 1,
                message: format!("unexpected column `{c}` at {i}"),
            });
        }
    }
    let width = 4 + 2 * keys.len();
    let mut set = SampleSet::new(keys);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(io(line_no))?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| DataError::Malformed { line: line_no, message };
        if f.len() != width {
            return Err(bad(format!("expected {width} fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad(format!("bad index `{s}`")));
        let list = |s: &str| -> Result<Vec<u32>> {
            if s.is_empty() {
                Ok(Vec::new())
            } else {
                s.split('|').map(num).collect()
            }
        };
        let label = num(f[0])?;
        if label > 1 {
            return Err(bad(format!("label {label} not in {{0,1}}")));
        }
        let nk = set.attr_keys.len();
        let mut target_attrs = Vec::with_capacity(nk);
        let mut history_attrs = Vec::with_capacity(nk);
        let history;
        if nk == 0 {
            history = list(f[3])?;
        } else {
            target_attrs.push(num(f[3])?);
            history = list(f[4])?;
            history_attrs.push(list(f[5])?);
            for k in 1..nk {
                target_attrs.push(num(f[4 + 2 * k])?);
                history_attrs.push(list(f[5 + 2 * k])?);
            }
        }
        if history_attrs.iter().any(|a| a.len() != history.len()) {
            return Err(bad("attribute sequence not aligned with history".into()));
        }
        set.samples.push(Sample {
            label: label as u8,
            user: num(f[1])?,
            target: num(f[2])?,
            target_attrs,
            history,
            history_attrs,
        });
    }
    Ok(set)
}
