//! Finite-difference gradient checking.
//!
//! The oracle is a plain central difference evaluated by rebuilding the
//! graph at perturbed inputs; it never touches the backward pass it
//! verifies.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::TensorData;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const UNIT_TOL: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Evaluate `build` at `inputs` (as f64) and return the scalar output.
fn eval(
    build: &impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[TensorData<f64>],
) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars)?;
    tape.scalar_value(out)
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences at the listed coordinates (`(input_index, flat_index)`
/// pairs); `None` checks every coordinate of every input. Returns the worst
/// relative error.
pub fn grad_check_at(
    build: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[TensorData<f64>],
    coords: Option<&[(usize, usize)]>,
    step: f64,
    tol: f64,
) -> std::result::Result<f64, String> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars).map_err(|e| e.to_string())?;
    let grads = tape.backward(out).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.grad(*v, t.len()))
        .collect();

    let all_coords: Vec<(usize, usize)> = match coords {
        Some(c) => c.to_vec(),
        None => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
            .collect(),
    };

    let mut worst = 0.0f64;
    for (i, k) in all_coords {
        let mut plus = inputs.to_vec();
        plus[i].data[k] += step;
        let mut minus = inputs.to_vec();
        minus[i].data[k] -= step;
        let fp = eval(&build, &plus).map_err(|e| e.to_string())?;
        let fm = eval(&build, &minus).map_err(|e| e.to_string())?;
        let numeric = (fp - fm) / (2.0 * step);
        let err = rel_err(analytic[i][k], numeric, 1e-8);
        worst = worst.max(err);
        if err > tol {
            return Err(format!(
                "input {i} coord {k}: analytic {} vs numeric {numeric} (rel err {err:.3e} > {tol:.1e})",
                analytic[i][k]
            ));
        }
    }
    Ok(worst)
}

/// Full-coordinate check at the default step and unit tolerance.
pub fn grad_check(
    build: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[TensorData<f64>],
) -> std::result::Result<f64, String> {
    grad_check_at(build, inputs, None, DEFAULT_STEP, UNIT_TOL)
}

/// Deterministic pseudo-random values in `[lo, hi)` for test inputs.
pub fn test_values(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = crate::init::InitRng::for_param(seed, "check");
    (0..n)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            lo + (hi - lo) * u
        })
        .collect()
}

/// Values bounded away from zero (for kinked ops like relu and l1).
pub fn test_values_offset_zero(seed: u64, n: usize) -> Vec<f64> {
    test_values(seed, n, 0.1, 1.0)
        .into_iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 0 { v } else { -v })
        .collect()
}
