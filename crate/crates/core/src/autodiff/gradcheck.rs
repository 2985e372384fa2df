//! Central finite-difference gradient checks for tape-built scalars.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Norm below which a gradient counts as zero, so the ratio stays defined.
pub const ZERO_FLOOR: f64 = 1e-12;

/// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` of the full gradient,
/// all inputs concatenated, in the Euclidean norm.
pub fn check_gradients<'g, F>(inputs: &[Tensor], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    let grads = tape.backward(out)?;

    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input);
        for j in 0..input.len() {
            let orig = input.data()[j];
            perturbed[i].data_mut()[j] = orig + step;
            let plus = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig - step;
            let minus = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    let denom = f64::max(a2, n2).sqrt().max(ZERO_FLOOR);
    Ok(diff2.sqrt() / denom)
}
