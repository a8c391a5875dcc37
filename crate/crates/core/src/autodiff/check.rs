use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` must be a pure function of its inputs: it receives a fresh tape and
/// one variable per input tensor and returns a scalar loss. The function is
/// re-evaluated `2 * total_elements` times with perturbed inputs, so keep
/// the instances small.
///
/// Returns the worst relative error `|ad - fd| / max(1e-8, |fd|)` over all
/// input elements.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Domain {
            op: "grad_check",
            msg: format!("step {} must be positive and finite", step),
        });
    }

    let mut tape = Tape::new();
    let params: Vec<Var> = inputs
        .iter()
        .map(|t| tape.parameter(t.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&mut tape, &params)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NonScalarLoss {
            shape: tape.value(loss).shape().to_vec(),
        });
    }
    let grads = tape.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<_>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let ad = grads.get(params[ti]).expect("parameter has a gradient");
        for e in 0..input.len() {
            let x = input.data()[e];
            work[ti].data_mut()[e] = x + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[e] = x - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[e] = x;
            let fd = (plus - minus) / (2.0 * step);
            let rel = (ad.data()[e] - fd).abs() / f64::max(1e-8, fd.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
