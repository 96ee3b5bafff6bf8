use super::{AutodiffError, ParamSet, Tape, Var};

/// Worst element found by [`finite_difference_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max relative error between tape gradients and central differences.
///
/// `loss_fn` rebuilds the loss on a fresh tape; it is called once for the
/// analytic gradient and twice per parameter element.
pub fn finite_difference_check<F>(params: &ParamSet, loss_fn: F, step: f64) -> Result<f64, AutodiffError>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamSet) -> Var,
{
    finite_difference_report(params, loss_fn, step).map(|r| r.max_rel_error)
}

pub fn finite_difference_report<F>(params: &ParamSet, loss_fn: F, step: f64) -> Result<FdReport, AutodiffError>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamSet) -> Var,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(AutodiffError::InvalidStep { step });
    }
    let analytic = {
        let mut tape = Tape::new();
        tape.register_all(params);
        let loss = loss_fn(&mut tape, params);
        tape.backward(loss, params)?
    };

    let eval = |ps: &ParamSet| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, ps);
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = params.clone();
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            if !err.is_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    param: params.name(id).to_string(),
                });
            }
            if err > report.max_rel_error {
                report = FdReport {
                    max_rel_error: err,
                    worst_param: params.name(id).to_string(),
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
