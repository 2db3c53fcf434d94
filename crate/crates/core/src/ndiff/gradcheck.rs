//! Central finite-difference checking of tape gradients.

use ndarray::Array2;

use super::{Tape, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input.
    pub rel_errors: Vec<f64>,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn rel_error(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
    let diff = (a - n).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(n.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `h`, for every input array.
pub fn check_gradients<F>(f: F, inputs: &[Array2<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;
    let eval = |xs: &[Array2<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let ls: Vec<Tensor> = xs.iter().map(|x| t.param(x.clone())).collect();
        let o = f(&mut t, &ls)?;
        Ok(t.scalar(o))
    };

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut max_abs_error = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaves[k], input.dim());
        let mut numeric = Array2::zeros(input.dim());
        for idx in 0..input.len() {
            let (r, c) = (idx / input.ncols(), idx % input.ncols());
            let orig = xs[k][[r, c]];
            xs[k][[r, c]] = orig + h;
            let plus = eval(&xs)?;
            xs[k][[r, c]] = orig - h;
            let minus = eval(&xs)?;
            xs[k][[r, c]] = orig;
            numeric[[r, c]] = (plus - minus) / (2.0 * h);
        }
        max_abs_error = max_abs_error.max(
            (&analytic - &numeric)
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs())),
        );
        rel_errors.push(rel_error(&analytic, &numeric));
    }
    Ok(GradCheckReport {
        rel_errors,
        max_abs_error,
    })
}
