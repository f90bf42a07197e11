//! DHAN and the baselines it is compared against.
//!
//! Every model scores a padded [`Batch`] on a [`Tape`]. The hierarchical
//! branch runs one activation unit per level of each dimension: items are
//! softmax-weighted inside their lowest attribute group and pooled into
//! cluster vectors, clusters are weighted inside their parent group, and so
//! on up to the top, where the weighted clusters sum to the dimension's
//! overall interest vector `x`. The head sees `[x_1, .., x_D, i_x, e_a]`.

mod batch;
mod layers;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Catalog;
use crate::hierarchy::{HierarchyError, HierarchySpec};
use crate::tensor::{uniform, Bound, Objective, ParamStore, Scalar, Segments, Tape, Tensor, TensorError, Var};

pub use batch::{Batch, DimensionLayout, LevelLayout};
pub use layers::{ActivationUnit, Gru, Mlp, PRELU_INIT};
pub use trace::{DimensionTrace, ForwardTrace, GroupTrace, LevelTrace};

/// Half-width of the uniform embedding initialization.
pub const EMBEDDING_INIT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sample {sample} has an empty history")]
    EmptyHistory { sample: usize },
    #[error("group weights sum to zero")]
    DegenerateGroup,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dhan,
    DhanGru,
    Din,
    Wdl,
    Pnn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dhan,
        Variant::DhanGru,
        Variant::Din,
        Variant::Wdl,
        Variant::Pnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dhan => "dhan",
            Variant::DhanGru => "dhan_gru",
            Variant::Din => "din",
            Variant::Wdl => "wdl",
            Variant::Pnn => "pnn",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Variant::Dhan | Variant::DhanGru)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            ModelError::Config(format!(
                "unknown variant `{s}` (expected dhan, dhan_gru, din, wdl or pnn)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub t_max: usize,
    pub attention_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Adds a learned attribute embedding to each cluster vector.
    pub attr_embedding: bool,
    pub hierarchy: HierarchySpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Dhan,
            embedding_dim: 16,
            t_max: 50,
            attention_hidden: vec![36],
            head_hidden: vec![80, 40],
            attr_embedding: false,
            hierarchy: HierarchySpec::single(crate::data::CATEGORY),
        }
    }
}

/// Embedding table sizes, padding row included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub users: usize,
    pub items: usize,
    pub attributes: BTreeMap<String, usize>,
}

impl VocabSizes {
    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self::from_vocab(&catalog.vocab, &catalog.attr_keys)
    }

    pub fn from_vocab(vocab: &crate::data::Vocabulary, attr_keys: &[String]) -> Self {
        VocabSizes {
            users: vocab.table_len(crate::data::USER_NS),
            items: vocab.table_len(crate::data::ITEM_NS),
            attributes: attr_keys.iter().map(|k| (k.clone(), vocab.table_len(k))).collect(),
        }
    }
}

/// Graph handles of one hierarchical dimension.
#[derive(Clone, Debug)]
pub struct DimensionVars {
    /// Per flattened position, weight within its lowest-level group.
    pub position_weights: Var,
    /// Per attribute level, each group's weight within its parent group
    /// (within the sample at the top level).
    pub group_weights: Vec<Var>,
    /// Per attribute level, the pooled cluster vectors.
    pub clusters: Vec<Var>,
    pub overall: Var,
}

/// Graph handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[B, 1]` click probabilities.
    pub p: Var,
    pub features: Var,
    /// Per flattened position: normalized weights for the i_x pooling, or
    /// the unnormalized attention weights of din.
    pub item_weights: Option<Var>,
    pub item_feature: Option<Var>,
    pub dimensions: Vec<DimensionVars>,
}

/// Normalized weighted sum per segment: `segment_sum(w * v) / segment_sum(w)`.
pub fn attribute_pool<F: Scalar>(tape: &mut Tape<F>, weights: Var, values: Var, seg: &Segments) -> Result<Var> {
    let wv = tape.mul(weights, values)?;
    let num = tape.segment_sum(wv, seg)?;
    let den = tape.segment_sum(weights, seg)?;
    if tape.value(den).data().iter().any(|&w| w == F::zero()) {
        return Err(ModelError::DegenerateGroup);
    }
    Ok(tape.div(num, den)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
}

impl Model {
    pub fn new(config: ModelConfig, sizes: VocabSizes) -> Result<Self> {
        let model = Model { config, sizes };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.embedding_dim == 0 || c.t_max == 0 {
            return Err(ModelError::Config("embedding_dim and t_max must be at least 1".into()));
        }
        if c.attention_hidden.is_empty() || c.head_hidden.is_empty() {
            return Err(ModelError::Config("hidden size lists must be non-empty".into()));
        }
        if c.attention_hidden.iter().chain(&c.head_hidden).any(|&w| w == 0) {
            return Err(ModelError::Config("hidden sizes must be at least 1".into()));
        }
        c.hierarchy.validate()?;
        for key in c.hierarchy.attribute_keys() {
            if !self.sizes.attributes.contains_key(&key) {
                return Err(ModelError::Config(format!(
                    "hierarchy level `{key}` is not in the vocabulary"
                )));
            }
        }
        Ok(())
    }

    fn d(&self) -> usize {
        self.config.embedding_dim
    }

    /// DIN weights are used unnormalized, so only its unit keeps an output bias.
    fn au(&self, name: &str) -> ActivationUnit {
        let prefix = format!("au.{name}");
        match self.config.variant {
            Variant::Din => ActivationUnit::new(prefix, self.d(), &self.config.attention_hidden),
            _ => ActivationUnit::normalized(prefix, self.d(), &self.config.attention_hidden),
        }
    }

    /// Activation units of one dimension, item level first.
    fn dimension_units(&self, dim: usize) -> Vec<ActivationUnit> {
        let dim = &self.config.hierarchy.dimensions[dim];
        dim.levels
            .iter()
            .map(|l| self.au(&format!("{}.{l}", dim.name)))
            .collect()
    }

    fn gru(&self) -> Gru {
        Gru::new("gru", self.d())
    }

    fn head(&self) -> Mlp {
        let d = self.d();
        let input = match self.config.variant {
            Variant::Dhan | Variant::DhanGru => (self.config.hierarchy.dimensions.len() + 2) * d,
            Variant::Din | Variant::Wdl => 2 * d,
            Variant::Pnn => 2 * d + 1,
        };
        Mlp::new("head", input, &self.config.head_hidden, 2)
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamStore<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = self.d();
        let mut items: Tensor<F> = uniform(&[self.sizes.items, d], EMBEDDING_INIT, &mut rng);
        items.data_mut()[..d].fill(F::zero());
        params.insert("emb.item", items);
        let variant = self.config.variant;
        if variant.is_hierarchical() {
            if self.config.attr_embedding {
                for key in self.config.hierarchy.attribute_keys() {
                    let n = self.sizes.attributes[&key];
                    params.insert(format!("emb.attr.{key}"), uniform(&[n, d], EMBEDDING_INIT, &mut rng));
                }
            }
            for dim in 0..self.config.hierarchy.dimensions.len() {
                for au in self.dimension_units(dim) {
                    au.init(&mut params, &mut rng);
                }
            }
            if variant == Variant::DhanGru {
                self.gru().init(&mut params, &mut rng);
                self.au("gru").init(&mut params, &mut rng);
            }
        }
        match variant {
            Variant::Din => self.au("din").init(&mut params, &mut rng),
            Variant::Wdl => {
                params.insert("wide.user", uniform(&[self.sizes.users, 2], EMBEDDING_INIT, &mut rng));
                params.insert("wide.item", uniform(&[self.sizes.items, 2], EMBEDDING_INIT, &mut rng));
                for key in self.config.hierarchy.attribute_keys() {
                    let n = self.sizes.attributes[&key];
                    params.insert(format!("wide.attr.{key}"), uniform(&[n, 2], EMBEDDING_INIT, &mut rng));
                }
            }
            _ => {}
        }
        self.head().init(&mut params, &mut rng);
        params
    }

    pub fn batch(&self, samples: &[&crate::data::Sample], attr_keys: &[String]) -> Result<Batch> {
        Batch::new(samples, attr_keys, &self.config.hierarchy, self.config.t_max)
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, batch: &Batch) -> Result<Forward> {
        if batch.dimensions.len() != self.config.hierarchy.dimensions.len() {
            return Err(ModelError::Config("batch was built for a different hierarchy".into()));
        }
        let emb = p.var("emb.item")?;
        let e = tape.gather(emb, &batch.items)?;
        let q = tape.gather(emb, &batch.position_targets)?;
        let e_a = tape.gather(emb, &batch.targets)?;

        let mut dimensions = Vec::new();
        let mut item_weights = None;
        let item_feature;
        let features = match self.config.variant {
            Variant::Dhan | Variant::DhanGru => {
                let mut item_scores = None;
                for di in 0..batch.dimensions.len() {
                    let (vars, scores) = self.dimension(tape, p, batch, di, e, q, emb)?;
                    item_scores.get_or_insert(scores);
                    dimensions.push(vars);
                }
                let (w, ix) = if self.config.variant == Variant::Dhan {
                    let s = item_scores.expect("at least one dimension");
                    let w = tape.segment_softmax(s, &batch.by_sample)?;
                    let wv = tape.mul(w, e)?;
                    (w, tape.segment_sum(wv, &batch.by_sample)?)
                } else {
                    self.gru_feature(tape, p, batch, emb, q)?
                };
                item_weights = Some(w);
                item_feature = Some(ix);
                let mut parts: Vec<Var> = dimensions.iter().map(|d| d.overall).collect();
                parts.push(ix);
                parts.push(e_a);
                tape.concat_last(&parts)?
            }
            Variant::Din => {
                let s = self.au("din").score(tape, p, e, q)?;
                let ws = tape.mul(s, e)?;
                let pooled = tape.segment_sum(ws, &batch.by_sample)?;
                item_weights = Some(s);
                item_feature = Some(pooled);
                tape.concat_last(&[pooled, e_a])?
            }
            Variant::Wdl => {
                let mean = self.mean_pool(tape, batch, e)?;
                item_feature = Some(mean);
                tape.concat_last(&[mean, e_a])?
            }
            Variant::Pnn => {
                let mean = self.mean_pool(tape, batch, e)?;
                item_feature = Some(mean);
                let prod = tape.mul(mean, e_a)?;
                let inner = tape.sum_last(prod)?;
                tape.concat_last(&[mean, e_a, inner])?
            }
        };
        let mut logits = self.head().forward(tape, p, features)?;
        if self.config.variant == Variant::Wdl {
            let user = p.var("wide.user")?;
            let wide = tape.gather(user, &batch.users)?;
            logits = tape.add(logits, wide)?;
            let item = p.var("wide.item")?;
            let wide = tape.gather(item, &batch.targets)?;
            logits = tape.add(logits, wide)?;
            for key in self.config.hierarchy.attribute_keys() {
                let k = batch
                    .key_index(&key)
                    .ok_or_else(|| ModelError::Config(format!("samples lack attribute `{key}`")))?;
                let table = p.var(&format!("wide.attr.{key}"))?;
                let wide = tape.gather(table, &batch.target_attrs[k])?;
                logits = tape.add(logits, wide)?;
            }
        }
        let probs = tape.softmax_rows(logits)?;
        let p = tape.select_col(probs, 1)?;
        Ok(Forward {
            p,
            features,
            item_weights,
            item_feature,
            dimensions,
        })
    }

    /// Mean negative log-likelihood of the batch labels.
    pub fn loss<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, batch: &Batch) -> Result<(Var, Forward)> {
        let fwd = self.forward(tape, p, batch)?;
        let labels: Vec<F> = batch.labels.iter().map(|&y| F::of(y)).collect();
        let loss = tape.nll(fwd.p, &labels)?;
        Ok((loss, fwd))
    }

    #[allow(clippy::too_many_arguments)]
    fn dimension<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound<F>,
        batch: &Batch,
        di: usize,
        e: Var,
        q: Var,
        emb: Var,
    ) -> Result<(DimensionVars, Var)> {
        let layout = &batch.dimensions[di];
        let units = self.dimension_units(di);
        let raw = units[0].score(tape, p, e, q)?;
        let lowest = &layout.levels[0];
        let position_weights = tape.segment_softmax(raw, &lowest.members)?;
        let mut c = attribute_pool(tape, position_weights, e, &lowest.members)?;
        c = self.with_attribute(tape, p, c, lowest)?;
        let mut clusters = vec![c];
        let mut group_weights = Vec::new();
        let depth = layout.levels.len();
        let mut overall = None;
        for k in 0..depth {
            let level = &layout.levels[k];
            let targets: Vec<usize> = level.sample.iter().map(|&b| batch.targets[b]).collect();
            let qg = tape.gather(emb, &targets)?;
            let s = units[k + 1].score(tape, p, c, qg)?;
            if k + 1 < depth {
                let up = &layout.levels[k + 1];
                let w = tape.segment_softmax(s, &up.members)?;
                c = attribute_pool(tape, w, c, &up.members)?;
                c = self.with_attribute(tape, p, c, up)?;
                clusters.push(c);
                group_weights.push(w);
            } else {
                let w = tape.segment_softmax(s, &layout.top)?;
                let wc = tape.mul(w, c)?;
                overall = Some(tape.segment_sum(wc, &layout.top)?);
                group_weights.push(w);
            }
        }
        let vars = DimensionVars {
            position_weights,
            group_weights,
            clusters,
            overall: overall.expect("depth >= 1"),
        };
        Ok((vars, raw))
    }

    fn with_attribute<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound<F>, c: Var, level: &LevelLayout) -> Result<Var> {
        if !self.config.attr_embedding {
            return Ok(c);
        }
        let table = p.var(&format!("emb.attr.{}", level.key))?;
        let idx: Vec<usize> = level.attribute.iter().map(|&a| a as usize).collect();
        let a = tape.gather(table, &idx)?;
        Ok(tape.add(c, a)?)
    }

    fn mean_pool<F: Scalar>(&self, tape: &mut Tape<F>, batch: &Batch, e: Var) -> Result<Var> {
        let sum = tape.segment_sum(e, &batch.by_sample)?;
        let counts: Vec<F> = batch.lengths.iter().map(|&n| F::of(n as f64)).collect();
        let counts = tape.constant(Tensor::new([batch.size, 1], counts)?);
        Ok(tape.div(sum, counts)?)
    }

    /// GRU over the padded history, then attention over its states.
    /// Returns (state weights, i_x).
    fn gru_feature<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound<F>,
        batch: &Batch,
        emb: Var,
        q: Var,
    ) -> Result<(Var, Var)> {
        let (b, t, d) = (batch.size, batch.t, self.d());
        let gru = self.gru();
        let mut h = tape.constant(Tensor::zeros([b, d]));
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let idx: Vec<usize> = (0..b).map(|r| batch.items[r * t + step]).collect();
            let x = tape.gather(emb, &idx)?;
            let m: Vec<F> = (0..b)
                .map(|r| if batch.mask[r * t + step] { F::one() } else { F::zero() })
                .collect();
            let m = tape.constant(Tensor::new([b, 1], m)?);
            h = gru.step(tape, p, x, h, m)?;
            states.push(h);
        }
        // Time-major stack, reordered to the sample-major position layout.
        let stacked = tape.concat_rows(&states)?;
        let perm: Vec<usize> = (0..b * t).map(|r| (r % t) * b + r / t).collect();
        let hs = tape.gather(stacked, &perm)?;
        let s = self.au("gru").score(tape, p, hs, q)?;
        let w = tape.segment_softmax(s, &batch.by_sample)?;
        let wh = tape.mul(w, hs)?;
        Ok((w, tape.segment_sum(wh, &batch.by_sample)?))
    }
}

/// Mean loss of a model on a fixed batch, for gradient checks.
pub struct BatchLoss<'a> {
    pub model: &'a Model,
    pub batch: &'a Batch,
}

impl Objective for BatchLoss<'_> {
    type Error = ModelError;

    fn eval<F: Scalar>(&self, tape: &mut Tape<F>, params: &Bound<'_, F>) -> Result<Var> {
        Ok(self.model.loss(tape, params, self.batch)?.0)
    }
}

#[cfg(test)]
mod tests;
