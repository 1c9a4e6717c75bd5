use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst coordinate of a central-difference comparison for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

const DENOM_FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?.value().item()?;
    if !out.is_finite() {
        return Err(Error::Numeric("function evaluated to a non-finite value".into()));
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every input tensor. Relative error per coordinate is
/// `|analytic - numeric| / max(|analytic|, 1e-8)`.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<GradCheckReport>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        if !loss.value().all_finite() {
            return Err(Error::Numeric("function evaluated to a non-finite value".into()));
        }
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..grad.len() {
            let orig = inputs[which].data()[j];
            probe[which].data_mut()[j] = orig + h;
            let plus = evaluate(&f, &probe)?;
            probe[which].data_mut()[j] = orig - h;
            let minus = evaluate(&f, &probe)?;
            probe[which].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(DENOM_FLOOR);
            if rel > report.max_rel_error || j == 0 {
                report = GradCheckReport {
                    max_rel_error: rel.max(report.max_rel_error),
                    worst_index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Single-input form of [`finite_diff_check_many`]; returns the max relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let reports = finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(reports[0].max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 0.9, -1.0, 0.5]).unwrap();
        let err = finite_diff_check(|_, v| v.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn quadratic_central_difference() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let err = finite_diff_check(|_, v| v.mul(v)?.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_nonfinite() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        assert!(finite_diff_check(|_, v| v.sum(), &x, 0.0).is_err());
        let big = Tensor::from_vec(&[1], vec![700.0]).unwrap();
        let r = finite_diff_check(|_, v| v.scale(2.0)?.exp()?.sum(), &big, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
