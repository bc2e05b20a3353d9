use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compare the tape gradient of a scalar function against central differences.
///
/// `f` builds the scalar on the supplied tape from the input variable. Returns
/// the maximum over coordinates of `|analytic - numeric| / (|numeric| + 1e-12)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad_tensor(xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let hi = eval(probe.clone())?;
        probe.data_mut()[i] = orig - step;
        let lo = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        let numeric = (hi - lo) / (2.0 * step);
        let err = (analytic.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
