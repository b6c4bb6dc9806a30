//! Central finite-difference gradient oracle (64-bit).
//!
//! Independent of the tape's backward rules: it only evaluates the forward
//! value of the function at perturbed inputs.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Worst disagreement found across all sampled coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `f` against central differences at
/// `coords_per_input` random coordinates of every input.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    f: F,
    coords_per_input: usize,
    rng: &mut impl Rng,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let h = 1e-5;
    let floor = 1e-6;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("populated").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        for _ in 0..coords_per_input {
            let c = rng.random_range(0..input.len());
            let orig = input.data()[c];
            work[idx].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[idx].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[idx].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(analytic[idx][c], numeric, floor));
            coords += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        coords,
    })
}
