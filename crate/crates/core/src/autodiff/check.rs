use std::collections::BTreeMap;
use std::fmt::Debug;

use super::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Worst entry found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<K> {
    pub max_rel_error: f64,
    /// `(parameter, row, col)` of the worst entry; `None` with no entries.
    pub worst: Option<(K, usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` must record the loss for the given parameter values on a fresh
/// tape and return the scalar loss node; it is called once at `point` and
/// twice per parameter entry. The error per entry is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<K, F>(build: F, point: &BTreeMap<K, Matrix>, step: f64) -> Result<GradCheckReport<K>>
where
    K: Ord + Clone + Debug,
    F: Fn(&mut Tape<K>, &BTreeMap<K, Matrix>) -> Result<NodeId>,
{
    grad_check_with(build, point, step, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients before
/// comparison. Used to verify that the harness catches a broken gradient.
pub fn grad_check_with<K, F, A>(
    build: F,
    point: &BTreeMap<K, Matrix>,
    step: f64,
    adjust: A,
) -> Result<GradCheckReport<K>>
where
    K: Ord + Clone + Debug,
    F: Fn(&mut Tape<K>, &BTreeMap<K, Matrix>) -> Result<NodeId>,
    A: FnOnce(&mut Gradients<K>),
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("grad_check step must be > 0, got {step}")));
    }
    if let Some((k, _)) = point.iter().find(|(_, m)| !m.is_finite()) {
        return Err(Error::NonFinite(format!("grad_check point, parameter {k:?}")));
    }
    let eval = |params: &BTreeMap<K, Matrix>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let loss = build(&mut tape, point)?;
    let mut grads = tape.backward(loss)?;
    adjust(&mut grads);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work = point.clone();
    for (key, value) in point {
        let analytic = grads
            .get(key)
            .ok_or_else(|| Error::Invariant(format!("no gradient for parameter {key:?}")))?;
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let x = value.get(r, c);
                let m = work.get_mut(key).expect("cloned from point");
                m.set(r, c, x + step);
                let plus = eval(&work)?;
                let m = work.get_mut(key).expect("cloned from point");
                m.set(r, c, x - step);
                let minus = eval(&work)?;
                work.get_mut(key).expect("cloned from point").set(r, c, x);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at perturbed parameter {key:?}[{r},{c}]"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic.get(r, c);
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                report.entries_checked += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((key.clone(), r, c));
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
