use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(theta + h) - f(theta - h)) / 2h` for every trainable scalar.
///
/// `forward` evaluates the objective; `backward` must accumulate the
/// analytic gradient of the same objective into the (already zeroed)
/// parameter gradients. The error per scalar is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_gradcheck<F, B>(
    params: &mut ParamSet,
    forward: F,
    mut backward: B,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
    B: FnMut(&mut ParamSet) -> Result<()>,
{
    if h <= 0.0 {
        return Err(Error::Argument(format!("step h must be positive, got {h}")));
    }
    params.zero_grad();
    backward(params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = (0..params.len()).collect();
    for pi in ids {
        let (trainable, len, name) = {
            let p = params.iter().nth(pi).expect("index in range");
            (p.trainable, p.value.len(), p.name.clone())
        };
        if !trainable {
            continue;
        }
        for i in 0..len {
            let orig = nth_value(params, pi, i);
            set_value(params, pi, i, orig + h);
            let plus = forward(params)?;
            set_value(params, pi, i, orig - h);
            let minus = forward(params)?;
            set_value(params, pi, i, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite while perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn nth_value(params: &ParamSet, pi: usize, i: usize) -> f64 {
    params.iter().nth(pi).expect("index in range").value.data()[i]
}

fn set_value(params: &mut ParamSet, pi: usize, i: usize, v: f64) {
    params
        .iter_mut()
        .nth(pi)
        .expect("index in range")
        .value
        .data_mut()[i] = v;
}

/// Same comparison for a function of a plain input vector: returns the
/// largest relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn finite_diff_input_check(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}
