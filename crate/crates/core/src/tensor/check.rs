//! Central finite-difference verification of analytic gradients.

use super::{ParamSet, Scalar, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub n_checked: usize,
}

/// Compare the analytic gradient of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every element of every parameter.
///
/// `f` must be deterministic. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Parameter gradients are zeroed before
/// the analytic pass; values are restored afterwards.
pub fn finite_diff_check<F, Ef>(
    f: &dyn Fn(&ParamSet<F>) -> Result<Tensor<F>, Ef>,
    params: &ParamSet<F>,
    h: f64,
) -> Result<FiniteDiffReport, Ef>
where
    F: Scalar,
    Ef: From<TensorError>,
{
    assert!(h > 0.0, "finite_diff_check: h must be positive");
    params.zero_grads();
    let loss = f(params)?;
    loss.backward().map_err(Ef::from)?;

    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        n_checked: 0,
    };
    let hs = F::from_f64(h);
    for (name, p) in params.iter() {
        let analytic = p.grad_vec();
        let base = p.value_vec();
        for i in 0..base.len() {
            p.set_value_at(i, base[i] + hs);
            let plus = f(params)?.item().as_f64();
            p.set_value_at(i, base[i] - hs);
            let minus = f(params)?.item().as_f64();
            p.set_value_at(i, base[i]);

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.n_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
