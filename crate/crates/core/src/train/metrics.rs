use super::{Result, TrainError};

/// Area under the ROC curve by rank sum, ties counted half.
///
/// Works on doubled ranks so the statistic stays an exact integer until the
/// final division.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(TrainError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::NanScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average; doubled that is i + j + 2.
        let doubled = (i + j + 2) as u128;
        let hits = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled * hits;
        i = j + 1;
    }
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

/// Relative AUC improvement over `base`, in percent, measured above the
/// 0.5 random-guess floor.
pub fn rela_impr(measured: f64, base: f64) -> Result<f64> {
    if base == 0.5 {
        return Err(TrainError::RandomBase);
    }
    Ok(((measured - 0.5) / (base - 0.5) - 1.0) * 100.0)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
