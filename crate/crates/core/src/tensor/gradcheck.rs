use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest elementwise relative error over all checked inputs.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
}

/// Fraction of the largest gradient magnitude below which an entry is
/// compared against that magnitude rather than against itself.
const RELATIVE_FLOOR: f64 = 1e-3;

/// Checks the gradient of a scalar function of one tensor.
///
/// `f` must build the same computation on any graph it is handed; it is
/// re-run from scratch for every perturbation.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps, tol)
}

/// Checks the gradient of a scalar function wrt several input tensors.
///
/// The relative error of element `i` is `|a_i - n_i| / max(|a_i|, |n_i|, s)`
/// where `s` is `1e-3` times the largest magnitude seen in either gradient,
/// so entries that are negligible next to the rest are not judged on
/// round-off alone.
pub fn grad_check_many<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::Config(format!(
            "grad_check eps must be > 0, got {eps}"
        )));
    }
    let eval = |ins: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item()?.as_f64())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.data().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut col = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = T::of(orig.as_f64() + eps);
            let plus = eval(&work)?;
            work[k].data_mut()[i] = T::of(orig.as_f64() - eps);
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            col.push((plus - minus) / (2.0 * eps));
        }
        numeric.push(col);
    }

    let scale = analytic
        .iter()
        .chain(&numeric)
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        passed: true,
    };
    for (k, (a_col, n_col)) in analytic.iter().zip(&numeric).enumerate() {
        for (i, (&a, &n)) in a_col.iter().zip(n_col).enumerate() {
            let abs = (a - n).abs();
            let rel = if abs == 0.0 {
                0.0
            } else {
                abs / a.abs().max(n.abs()).max(floor)
            };
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (k, i);
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
