use super::tensor::{HasParameters, Real};
use crate::error::{Error, Result};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryError {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, max relative error over its entries)`, in parameter order.
    pub per_parameter: Vec<(String, f64)>,
    pub worst: Option<EntryError>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the analytic gradient accumulated by `loss_fn` against central differences.
///
/// `loss_fn` must return the loss and accumulate gradients into the model's
/// parameters; grads are zeroed before every call. The relative error of an entry
/// is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<T, M, F>(model: &mut M, epsilon: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    T: Real,
    M: HasParameters<T>,
    F: FnMut(&mut M) -> Result<T>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "grad_check epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    model.zero_grad();
    let first = loss_fn(model)?;
    let analytic: Vec<Vec<f64>> = model
        .parameters()
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.as_f64()).collect())
        .collect();
    model.zero_grad();
    let second = loss_fn(model)?;
    if first != second {
        return Err(Error::Determinism(format!(
            "two evaluations returned {first} and {second}"
        )));
    }

    let eps = T::lit(epsilon);
    let mut per_parameter = Vec::with_capacity(analytic.len());
    let mut worst: Option<EntryError> = None;
    for (pi, grads) in analytic.iter().enumerate() {
        let name = model.parameters()[pi].name.clone();
        let mut param_max = 0.0f64;
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.parameters()[pi].value.data()[j];
            let plus = orig + eps;
            let minus = orig - eps;

            model.parameters_mut()[pi].value.data_mut()[j] = plus;
            model.zero_grad();
            let f_plus = loss_fn(model)?;
            model.parameters_mut()[pi].value.data_mut()[j] = minus;
            model.zero_grad();
            let f_minus = loss_fn(model)?;
            model.parameters_mut()[pi].value.data_mut()[j] = orig;

            let numeric = (f_plus - f_minus).as_f64() / (plus - minus).as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            param_max = param_max.max(rel);
            if worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                worst = Some(EntryError {
                    parameter: name.clone(),
                    index: j,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        per_parameter.push((name, param_max));
    }
    model.zero_grad();
    let max_rel_error = per_parameter.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_parameter,
        worst,
    })
}
