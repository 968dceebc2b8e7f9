use crate::error::{Error, Result};

fn check(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} true labels for {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Input("macro F1 of an empty label set".into()));
    }
    if let Some(&l) = y_true.iter().chain(y_pred).find(|&&l| l >= k) {
        return Err(Error::Input(format!(
            "label {l} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// `confusion[t][p]` counts samples of true class `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    check(y_true, y_pred, k)?;
    let mut c = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        c[t][p] += 1;
    }
    Ok(c)
}

/// Unweighted mean over all `k` classes of `2TP / (2TP + FP + FN)`, with
/// classes whose denominator is zero scoring 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<(f64, Vec<f64>)> {
    let c = confusion_matrix(y_true, y_pred, k)?;
    let per_class: Vec<f64> = (0..k)
        .map(|i| {
            let tp = c[i][i];
            let fn_: u64 = c[i].iter().sum::<u64>() - tp;
            let fp: u64 = (0..k).map(|t| c[t][i]).sum::<u64>() - tp;
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect();
    let macro_ = per_class.iter().sum::<f64>() / k as f64;
    Ok((macro_, per_class))
}
