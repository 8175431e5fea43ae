//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use super::EngineError;

/// Denominator floor for the relative error. Below it the comparison is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// One loss evaluation: the loss value and the ReLU sign pattern of the
/// forward pass (see [`super::Tape::relu_signature`]).
pub struct Probe {
    pub loss: f64,
    pub relu_signature: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a `±h` probe changed the ReLU pattern,
    /// i.e. the difference quotient straddles a kink.
    pub skipped_kinks: usize,
    /// `(parameter, element)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against central differences of `eval` around
/// `params`, perturbing every element of every tensor by `±h`.
pub fn check<F>(
    params: &mut [Tensor],
    analytic: &[Tensor],
    h: f64,
    mut eval: F,
) -> Result<GradCheckReport, EngineError>
where
    F: FnMut(&[Tensor]) -> Result<Probe, EngineError>,
{
    if params.len() != analytic.len() {
        return Err(EngineError::Shape {
            op: "gradcheck",
            detail: format!("{} params vs {} gradients", params.len(), analytic.len()),
        });
    }
    let base = eval(params)?;
    let mut report = GradCheckReport::default();
    for p in 0..params.len() {
        if params[p].shape() != analytic[p].shape() {
            return Err(EngineError::Shape {
                op: "gradcheck",
                detail: format!("param {p}: {:?} vs {:?}", params[p].shape(), analytic[p].shape()),
            });
        }
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + h;
            let plus = eval(params)?;
            params[p].data_mut()[i] = orig - h;
            let minus = eval(params)?;
            params[p].data_mut()[i] = orig;

            if plus.relu_signature != base.relu_signature
                || minus.relu_signature != base.relu_signature
            {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(analytic[p].data()[i], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((p, i));
                }
            }
        }
    }
    Ok(report)
}
