//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{ParamId, ParameterStore, Scalar};
use crate::error::{Error, Result};

const REL_FLOOR: f64 = 1e-8;

/// Worst entry found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between tape gradients and central differences over
/// every entry of every trainable parameter.
pub fn grad_check<T, F>(params: &ParameterStore<T>, eps: f64, f: F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    grad_check_report(params, eps, None, 0, f).map(|r| r.max_rel_error)
}

/// Like [`grad_check`], optionally probing at most `max_per_param` randomly
/// chosen entries of each parameter.
pub fn grad_check_report<T, F>(
    params: &ParameterStore<T>,
    eps: f64,
    max_per_param: Option<usize>,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let mut grads = Gradients::new(params);
    {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss, &mut grads)?;
    }

    let eval = |store: &ParameterStore<T>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let v = tape.scalar(loss).as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss at probe point".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for id in params.ids() {
        if !params.get(id).requires_grad {
            continue;
        }
        let n = params.get(id).len();
        let entries: Vec<usize> = match max_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in entries {
            let analytic = grads.get(id).map_or(0.0, |g| g[k].as_f64());
            let numeric = central_difference(&mut probe, id, k, eps, &eval)?;
            let err = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(params.name(id).to_string());
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn central_difference<T: Scalar>(
    probe: &mut ParameterStore<T>,
    id: ParamId,
    k: usize,
    eps: f64,
    eval: &impl Fn(&ParameterStore<T>) -> Result<f64>,
) -> Result<f64> {
    let orig = probe.get(id).data()[k];
    probe.get_mut(id).data_mut()[k] = T::of(orig.as_f64() + eps);
    let plus = eval(probe);
    probe.get_mut(id).data_mut()[k] = T::of(orig.as_f64() - eps);
    let minus = eval(probe);
    probe.get_mut(id).data_mut()[k] = orig;
    Ok((plus? - minus?) / (2.0 * eps))
}
