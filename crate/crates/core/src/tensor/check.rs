//! Central finite-difference gradient checks.

use super::{ParamStore, Tape, Tensor, TensorError};

/// Agreement between analytic and numeric gradients of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both gradients vanish.
    pub relative_error: f64,
}

/// Gradients whose norms both fall below this are compared absolutely.
pub const VANISHING: f64 = 1e-9;

impl ParamCheck {
    /// Relative error at most `tol`, or both gradients vanish.
    pub fn within(&self, tol: f64) -> bool {
        self.relative_error <= tol || self.analytic_norm.max(self.numeric_norm) < VANISHING
    }
}

/// Compares the tape gradient of every parameter in `store` against central
/// differences with step `eps`.
///
/// `loss` must build the same scalar on every call; any randomness has to be
/// fixed outside of it.
pub fn finite_difference<F, E>(store: &ParamStore, eps: f64, loss: F) -> Result<Vec<ParamCheck>, E>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Tensor, E>,
    E: From<TensorError>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::with_params(s);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l))
    };
    let mut work = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let a = analytic.param_or_zeros(id, store);
        let mut diff2 = 0.0;
        let mut num2 = 0.0;
        for ((r, c), &ak) in a.indexed_iter() {
            let original = store.get(id)[[r, c]];
            work.get_mut(id)[[r, c]] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(id)[[r, c]] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(id)[[r, c]] = original;
            let n = (plus - minus) / (2.0 * eps);
            diff2 += (ak - n).powi(2);
            num2 += n * n;
        }
        let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n_norm = num2.sqrt();
        let scale = a_norm.max(n_norm);
        out.push(ParamCheck {
            name: store.name(id).to_string(),
            analytic_norm: a_norm,
            numeric_norm: n_norm,
            relative_error: if scale > 0.0 {
                diff2.sqrt() / scale
            } else {
                0.0
            },
        });
    }
    Ok(out)
}
