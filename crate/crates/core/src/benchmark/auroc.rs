use crate::error::{ensure_dim, Error, Result};
use crate::features::ScoreVector;

/// Probability that a random anomaly scores lower (less normal) than a random
/// normal sample, ties credited one half. `anomaly[i] == true` marks an anomaly.
pub fn auroc(scores: &ScoreVector, anomaly: &[bool]) -> Result<f64> {
    auroc_values(scores.as_slice(), anomaly)
}

/// Mann-Whitney form with midranks, in exact integer arithmetic on doubled ranks.
pub fn auroc_values(scores: &[f64], anomaly: &[bool]) -> Result<f64> {
    ensure_dim(scores.len(), anomaly.len(), "AUROC label count")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("NaN score"));
    }
    let n_anom = anomaly.iter().filter(|&&a| a).count() as u128;
    let n_norm = anomaly.len() as u128 - n_anom;
    if n_anom == 0 || n_norm == 0 {
        return Err(Error::invalid("AUROC needs both normal and anomalous samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks of normal samples (ranks ascending from 1).
    let mut rank2_normal: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_midrank = (i + 1 + j + 1) as u128;
        let normals = order[i..=j].iter().filter(|&&k| !anomaly[k]).count() as u128;
        rank2_normal += normals * doubled_midrank;
        i = j + 1;
    }
    // 2U = 2 * (rank sum - n(n+1)/2), counting pairs with normal above anomaly.
    let u2 = rank2_normal - n_norm * (n_norm + 1);
    Ok(u2 as f64 / (2 * n_norm * n_anom) as f64)
}
