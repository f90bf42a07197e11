use serde::Serialize;

use super::{mean_std, rela_impr, CurvePoint, Result, TrainError};

pub const METRICS_HEADER: &str = "model,dataset,run,seed,final_auc,final_loss";
pub const AGGREGATE_HEADER: &str = "model,dataset,auc_mean,auc_std,relaimpr_vs_base";
pub const CURVE_HEADER: &str = "step,train_loss,test_auc";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub model: String,
    pub dataset: String,
    pub run: usize,
    pub seed: u64,
    pub final_auc: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub model: String,
    pub dataset: String,
    pub auc_mean: f64,
    /// Population standard deviation over runs.
    pub auc_std: f64,
    pub relaimpr_vs_base: f64,
}

/// Per (model, dataset) in first-appearance order: mean and population std
/// of final AUC, and relative improvement over `baseline` on the same dataset.
pub fn aggregate(runs: &[RunMetrics], baseline: &str) -> Result<Vec<AggregateRow>> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in runs {
        let k = (r.model.as_str(), r.dataset.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let stats = |model: &str, dataset: &str| {
        let aucs: Vec<f64> = runs
            .iter()
            .filter(|r| r.model == model && r.dataset == dataset)
            .map(|r| r.final_auc)
            .collect();
        mean_std(&aucs)
    };
    keys.iter()
        .map(|&(model, dataset)| {
            let (mean, std) = stats(model, dataset);
            if !keys.contains(&(baseline, dataset)) {
                return Err(TrainError::Config(format!(
                    "baseline `{baseline}` has no runs on `{dataset}`"
                )));
            }
            let (base, _) = stats(baseline, dataset);
            Ok(AggregateRow {
                model: model.to_string(),
                dataset: dataset.to_string(),
                auc_mean: mean,
                auc_std: std,
                relaimpr_vs_base: rela_impr(mean, base)?,
            })
        })
        .collect()
}

pub fn metrics_csv(rows: &[RunMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model, r.dataset, r.run, r.seed, r.final_auc, r.final_loss
        ));
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model, r.dataset, r.auc_mean, r.auc_std, r.relaimpr_vs_base
        ));
    }
    out
}

/// Missing test AUC is written as an empty field.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in points {
        let auc = p.test_auc.map_or(String::new(), |a| a.to_string());
        out.push_str(&format!("{},{},{}\n", p.step, p.train_loss, auc));
    }
    out
}
