use crate::error::{arg_err, dim_err, Result};

/// Softmax over the unmasked entries of `scores`; masked entries are 0.
/// Stabilised by subtracting the maximum unmasked score.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(dim_err(format!(
            "{} scores vs {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(arg_err("softmax over an all-masked vector"));
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Given softmax output `y` and upstream `dy`, returns `dLoss/dscores`.
/// Masked entries have `y = 0` and therefore receive zero gradient.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(a, d)| a * (d - inner)).collect()
}
