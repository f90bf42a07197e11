//! Minibatch training on the negative log-likelihood, evaluation, repeated
//! runs and the report formats.

mod attention;
mod metrics;
mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sample, SampleSet};
use crate::models::{Model, ModelError};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape, TensorError};

pub use attention::{export_attention, AttentionRecord};
pub use metrics::{auc, mean_std, rela_impr};
pub use report::{
    aggregate, aggregate_csv, curve_csv, metrics_csv, AggregateRow, RunMetrics, AGGREGATE_HEADER, CURVE_HEADER,
    METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss became non-finite at step {step} (learning rate {lr})")]
    Diverged { step: usize, lr: f64 },
    #[error("AUC is undefined when only one class is present")]
    SingleClass,
    #[error("AUC input contains a NaN score")]
    NanScore,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("relative improvement is undefined for a base AUC of 0.5")]
    RandomBase,
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Curve granularity in optimizer steps.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            batch_size: 128,
            epochs: 1,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate), ("epsilon", self.epsilon)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("train.{name} must be positive")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(TrainError::Config(format!("train.{name} must be in [0, 1)")));
            }
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(
                "train.batch_size and train.eval_every must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean minibatch loss since the previous point; the full training-set
    /// loss at step 0.
    pub train_loss: f64,
    pub test_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub curve: Vec<CurvePoint>,
    /// Training-set loss at initialization and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub loss: f64,
    /// `None` when the set holds a single class.
    pub auc: Option<f64>,
}

/// Scores `set` in batches without recording gradients.
pub fn evaluate(model: &Model, params: &ParamStore<f32>, set: &SampleSet, batch_size: usize) -> Result<Evaluation> {
    let refs: Vec<&Sample> = set.samples.iter().collect();
    let mut scores = Vec::with_capacity(refs.len());
    let mut loss_sum = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = model.batch(chunk, &set.attr_keys)?;
        let mut tape = Tape::<f32>::new();
        let bound = params.bind(&mut tape);
        let (loss, fwd) = model.loss(&mut tape, &bound, &batch)?;
        loss_sum += tape.item(loss) * chunk.len() as f64;
        scores.extend(tape.value(fwd.p).to_f64_vec());
    }
    let labels: Vec<u8> = set.samples.iter().map(|s| s.label).collect();
    let auc = match auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(TrainError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        loss: if refs.is_empty() {
            f64::NAN
        } else {
            loss_sum / refs.len() as f64
        },
        scores,
        auc,
    })
}

fn diverged(e: ModelError, step: usize, lr: f64) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { .. }) => TrainError::Diverged { step, lr },
        other => TrainError::Model(other),
    }
}

/// Trains from `model.init_params(seed)`; minibatch order is shuffled per
/// epoch from the same seed. With `test`, the curve carries test AUC.
pub fn train(
    model: &Model,
    train_set: &SampleSet,
    test_set: Option<&SampleSet>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut params = model.init_params::<f32>(seed);
    let mut adam = Adam::new(cfg.adam(), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let test_auc = |params: &ParamStore<f32>| -> Result<Option<f64>> {
        match test_set {
            Some(t) => Ok(evaluate(model, params, t, cfg.batch_size)?.auc),
            None => Ok(None),
        }
    };
    let initial_loss = evaluate(model, &params, train_set, cfg.batch_size)?.loss;
    let mut curve = vec![CurvePoint {
        step: 0,
        train_loss: initial_loss,
        test_auc: test_auc(&params)?,
    }];

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let (mut window_loss, mut window_steps) = (0.0, 0usize);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let batch = model.batch(&samples, &train_set.attr_keys)?;
            let mut tape = Tape::<f32>::new();
            let bound = params.bind(&mut tape);
            let (loss, _) = model
                .loss(&mut tape, &bound, &batch)
                .map_err(|e| diverged(e, step + 1, cfg.learning_rate))?;
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(TrainError::Diverged {
                    step: step + 1,
                    lr: cfg.learning_rate,
                });
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<_> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut params, &grads)?;
            step += 1;
            window_loss += value;
            window_steps += 1;
            if step % cfg.eval_every == 0 {
                curve.push(CurvePoint {
                    step,
                    train_loss: window_loss / window_steps as f64,
                    test_auc: test_auc(&params)?,
                });
                (window_loss, window_steps) = (0.0, 0);
            }
        }
    }
    if window_steps > 0 {
        curve.push(CurvePoint {
            step,
            train_loss: window_loss / window_steps as f64,
            test_auc: test_auc(&params)?,
        });
    }
    let final_loss = evaluate(model, &params, train_set, cfg.batch_size)?.loss;
    Ok(TrainOutcome {
        params,
        curve,
        initial_loss,
        final_loss,
        steps: step,
    })
}

/// Runs `run` with seeds `base_seed + i` for `i < n`, concurrently; results
/// come back in seed order.
pub fn repeat_runs<T, E, R>(n: usize, base_seed: u64, run: R) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    R: Fn(usize, u64) -> Result<T, E> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| run(i, base_seed.wrapping_add(i as u64)))
        .collect()
}
