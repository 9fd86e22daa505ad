//! Finite-difference validation of analytic gradients.
//!
//! The checker compares the gradients produced by [`Tape::backward`]
//! against central differences `(f(p+h) - f(p-h)) / 2h`, reporting the
//! relative error `|a - n| / max(1, |a|, |n|)` per parameter entry.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::params::{ParamRegistry, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// One flagged entry whose relative error exceeded the tolerance.
#[derive(Debug, Clone)]
pub struct FlaggedEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a gradient check over one parameter set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in traversal order.
    pub per_param: Vec<(String, f64)>,
    pub flagged: Vec<FlaggedEntry>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "grad check: h={:e} tol={:e} max_rel_err={:.3e} [{}]",
            self.step,
            self.tolerance,
            self.max_rel_err,
            if self.passed() { "ok" } else { "FAILED" }
        )?;
        for (name, err) in &self.per_param {
            writeln!(f, "  {name}: max_rel_err={err:.3e}")?;
        }
        for e in &self.flagged {
            writeln!(
                f,
                "  FLAGGED {}[{}]: analytic={:.6e} numeric={:.6e} rel_err={:.3e}",
                e.param, e.index, e.analytic, e.numeric, e.rel_err
            )?;
        }
        Ok(())
    }
}

/// Relative error with a unit floor in the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the analytic gradient of a scalar-valued graph against
/// central differences.
///
/// `build` must construct the full forward computation on the given
/// tape, binding every parameter through the returned [`ParamRegistry`]
/// and returning the scalar loss node.
pub fn grad_check<P, F>(params: &P, h: f64, tol: f64, build: F) -> Result<GradCheckReport>
where
    P: Parameterized + Clone,
    F: Fn(&Tape, &P) -> Result<(Var, ParamRegistry)>,
{
    assert!(h > 0.0, "step must be positive");
    let tape = Tape::new();
    let (loss, registry) = build(&tape, params)?;
    let loss_value = tape.value(loss);
    if !loss_value.is_scalar() || !loss_value.scalar().is_finite() {
        return Err(Error::Evaluation(format!(
            "loss must be a finite scalar, got {} = {:?}",
            loss_value.shape_string(),
            loss_value.data().first()
        )));
    }
    let grads = tape.backward(loss)?;
    let analytic = registry.named_grads(&tape, &grads);

    let eval = |p: &P| -> Result<f64> {
        let tape = Tape::new();
        let (loss, _) = build(&tape, p)?;
        let v = tape.value(loss).scalar();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss {v}")));
        }
        Ok(v)
    };
    check_against(params, h, tol, &analytic, eval)
}

/// Compares externally supplied analytic gradients against central
/// differences of `eval`. Exposed so tests can corrupt a gradient and
/// confirm the checker flags it.
pub fn check_against<P, F>(
    params: &P,
    h: f64,
    tol: f64,
    analytic: &BTreeMap<String, Matrix>,
    eval: F,
) -> Result<GradCheckReport>
where
    P: Parameterized + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let tensors = params.named_tensors();
    let mut per_param = Vec::with_capacity(tensors.len());
    let mut flagged = Vec::new();
    let mut max_rel_err: f64 = 0.0;

    for (name, tensor) in &tensors {
        let analytic_tensor = analytic.get(name).ok_or_else(|| {
            Error::Evaluation(format!("no analytic gradient recorded for parameter {name}"))
        })?;
        let mut tensor_max: f64 = 0.0;
        for idx in 0..tensor.data().len() {
            let f_plus = eval(&perturbed(params, name, idx, h))?;
            let f_minus = eval(&perturbed(params, name, idx, -h))?;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic_tensor.data()[idx];
            let rel = relative_error(a, numeric);
            tensor_max = tensor_max.max(rel);
            max_rel_err = max_rel_err.max(rel);
            if rel > tol {
                flagged.push(FlaggedEntry {
                    param: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        per_param.push((name.clone(), tensor_max));
    }

    Ok(GradCheckReport {
        per_param,
        flagged,
        max_rel_err,
        tolerance: tol,
        step: h,
    })
}

fn perturbed<P: Parameterized + Clone>(params: &P, name: &str, idx: usize, delta: f64) -> P {
    let mut out = params.clone();
    out.visit_params_mut(&mut |n, m| {
        if n == name {
            m.data_mut()[idx] += delta;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamVec;

    fn square_params(x: f64) -> ParamVec {
        ParamVec(vec![("x".into(), Matrix::from_raw(1, 1, vec![x]))])
    }

    fn build_square(tape: &Tape, p: &ParamVec) -> Result<(Var, ParamRegistry)> {
        let mut reg = ParamRegistry::new();
        let x = reg.bind(tape, "x", &p.0[0].1);
        let y = tape.mul(x, x)?;
        Ok((y, reg))
    }

    #[test]
    fn square_gradient_matches_within_1e8() {
        let report = grad_check(&square_params(3.0), 1e-5, 1e-4, build_square).unwrap();
        assert!(report.passed());
        // analytic 6 vs numeric 6 to high precision
        assert!(report.max_rel_err < 1e-8, "{}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let params = square_params(3.0);
        let mut analytic = BTreeMap::new();
        // True gradient is 6; report 5.
        analytic.insert("x".to_string(), Matrix::from_raw(1, 1, vec![5.0]));
        let report = check_against(&params, 1e-5, 1e-4, &analytic, |p: &ParamVec| {
            Ok(p.0[0].1.scalar() * p.0[0].1.scalar())
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.flagged.len(), 1);
        assert_eq!(report.flagged[0].param, "x");
    }

    #[test]
    fn non_finite_loss_is_an_evaluation_error() {
        let params = square_params(3.0);
        let analytic = BTreeMap::from([("x".to_string(), Matrix::from_raw(1, 1, vec![6.0]))]);
        let err = check_against(&params, 1e-5, 1e-4, &analytic, |_: &ParamVec| {
            Err(Error::Evaluation("non-finite loss NaN".into()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn empty_param_set_passes_vacuously() {
        let params = ParamVec(Vec::new());
        let report = grad_check(&params, 1e-5, 1e-4, |tape: &Tape, _: &ParamVec| {
            let c = tape.scalar_constant(1.5);
            Ok((c, ParamRegistry::new()))
        })
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_err, 0.0);
    }
}
