use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|a - b| / max(|a|, |b|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::NotScalar { numel: v.numel() });
    }
    Ok(v.data()[0])
}

/// Checks the reverse-mode gradient of `f` at `params` against
/// `(f(p + eps) - f(p - eps)) / (2·eps)`, one coordinate at a time.
///
/// `f` receives a fresh tape and the leaf handles of `params`, and returns
/// the scalar objective.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
    compare_with_central_differences(&analytic, params, eps, |p| evaluate(&f, p))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps", "finite-difference step must be positive"));
    }
    Ok(())
}

/// Compares precomputed gradients with central differences of `eval`.
/// `eval` must return bit-identical values for identical inputs.
pub fn compare_with_central_differences<E>(
    analytic: &[Tensor<f64>],
    params: &[Tensor<f64>],
    eps: f64,
    eval: E,
) -> Result<GradCheckReport>
where
    E: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    check_eps(eps)?;
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(a, p)| a.shape() != p.shape()) {
        return Err(Error::shape("gradcheck", alloc::format!("{} gradients for {} parameters", analytic.len(), params.len())));
    }
    if eval(params)?.to_bits() != eval(params)?.to_bits() {
        return Err(Error::NonDeterministic);
    }
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    let mut probe = params.to_vec();
    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, j);
            }
        }
    }
    Ok(report)
}
