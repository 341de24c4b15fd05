//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Records `graph` applied to `inputs` (all trainable leaves) on a fresh tape.
pub fn forward_eval<F>(graph: F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = graph(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Scalar function of one tensor, recorded on a tape.
pub trait TapeFn: Fn(&mut Tape, Var) -> Result<Var> + Sync + Send {}
impl<F: Fn(&mut Tape, Var) -> Result<Var> + Sync + Send> TapeFn for F {}

fn eval_scalar(f: &impl TapeFn, point: Tensor) -> Result<(f64, Vec<i8>)> {
    let mut tape = Tape::new();
    let x = tape.constant(point);
    let y = f(&mut tape, x)?;
    let v = tape.value(y);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    if !v.item().is_finite() {
        return Err(Error::NonFinite("grad_check function value".into()));
    }
    Ok((v.item(), tape.branch_pattern()))
}

/// Analytic gradient of a scalar tape function at `point`.
pub fn gradient(f: &impl TapeFn, point: &Tensor) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let value = tape.value(y).clone();
    let mut g = tape.backward(y)?;
    Ok((value.item(), g.take(x)))
}

/// Max over coordinates of `|analytic − central| / max(1e-12, |central|)`.
///
/// `central` is a central difference on the scale of `step`, extrapolated
/// to zero width. Coordinates whose gradient is near 1e-9 sit at the
/// rounding floor of a single narrow quotient; wide stencils cut the floor
/// and the extrapolation removes their truncation error.
pub fn grad_check(f: &impl TapeFn, point: &Tensor, step: f64) -> Result<f64> {
    grad_check_with(Exec::default(), f, point, step)
}

pub fn grad_check_with(exec: Exec, f: &impl TapeFn, point: &Tensor, step: f64) -> Result<f64> {
    let r = grad_check_report(exec, f, point, step)?;
    if r.checked == 0 {
        return Err(Error::Invalid(
            "grad_check: every coordinate straddles a kink; use a smaller step".into(),
        ));
    }
    Ok(r.max_rel_error)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose narrowest stencil crosses a kink of `leaky_relu`, `abs`
    /// or `clamp`. The difference quotient there mixes two pieces and matches
    /// neither one-sided derivative, so they are left out of the maximum.
    pub straddled: usize,
}

/// Widest starting half-width, as a multiple of `step`.
const WIDEST: f64 = 256.0;
/// Shrink factor between tableau columns.
const SHRINK: f64 = 1.4;
const TABLEAU: usize = 10;
/// Error estimate (relative) below which the tableau stops growing.
const SETTLED: f64 = 1e-10;

/// Central difference for one coordinate, extrapolated to zero width by
/// Ridders' tableau and returned at the entry with the smallest error
/// estimate. Starts from the widest half-width up to `WIDEST·step` whose
/// stencil stays on the base side of every kink; `None` if even `step`
/// crosses one.
fn central(
    f: &impl TapeFn,
    point: &Tensor,
    i: usize,
    step: f64,
    base: &[i8],
) -> Result<Option<f64>> {
    let quotient = |h: f64| -> Result<Option<f64>> {
        let mut v = [0.0; 2];
        for (slot, sign) in v.iter_mut().zip([1.0, -1.0]) {
            let mut p = point.clone();
            p.data_mut()[i] += sign * h;
            let (y, pattern) = eval_scalar(f, p)?;
            if pattern != base {
                return Ok(None);
            }
            *slot = y;
        }
        Ok(Some((v[0] - v[1]) / (2.0 * h)))
    };
    let mut h = WIDEST * step;
    let first = loop {
        if let Some(q) = quotient(h)? {
            break q;
        }
        if h <= step {
            return Ok(None);
        }
        h = (h / 2.0).max(step);
    };
    let c2 = SHRINK * SHRINK;
    let mut prev = vec![first];
    let mut best = (f64::INFINITY, first);
    for _ in 1..TABLEAU {
        h /= SHRINK;
        let Some(q) = quotient(h)? else { break };
        let mut row = vec![q];
        let mut fac = c2;
        for j in 1..=prev.len() {
            let next = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            let err = (next - row[j - 1]).abs().max((next - prev[j - 1]).abs());
            if err <= best.0 {
                best = (err, next);
            }
            row.push(next);
            fac *= c2;
        }
        let k = prev.len();
        if best.0 <= SETTLED * best.1.abs() || (row[k] - prev[k - 1]).abs() >= 2.0 * best.0 {
            break;
        }
        prev = row;
    }
    Ok(Some(best.1))
}

pub fn grad_check_report(
    exec: Exec,
    f: &impl TapeFn,
    point: &Tensor,
    step: f64,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::Invalid(format!(
            "grad_check step must be > 0, got {step}"
        )));
    }
    let (value, analytic) = gradient(f, point)?;
    if !value.is_finite() || !analytic.is_finite() {
        return Err(Error::NonFinite("grad_check analytic gradient".into()));
    }
    let (_, base) = eval_scalar(f, point.clone())?;
    let estimates = exec.map_range(point.numel(), |i| central(f, point, i, step, &base));
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        straddled: 0,
    };
    for (a, c) in analytic.data().iter().zip(estimates) {
        match c? {
            Some(c) => {
                out.checked += 1;
                out.max_rel_error = out.max_rel_error.max((a - c).abs() / c.abs().max(1e-12));
            }
            None => out.straddled += 1,
        }
    }
    Ok(out)
}
