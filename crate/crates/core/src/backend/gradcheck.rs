//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Gradients smaller than this are
/// judged on absolute error scaled by the floor; without it, exactly-zero
/// gradients (dead ReLUs, BN over one element) turn round-off into huge ratios.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// Location of one scalar inside the list of checked inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElementIndex {
    pub input: usize,
    pub element: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ElementIndex>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub elements_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every element of every input.
///
/// A non-scalar output is reduced with a fixed random projection drawn from
/// `seed`, so every output element contributes to the checked scalar.
pub fn gradient_check<F>(f: F, inputs: &[Tensor<f64>], seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let projection = Tensor::from_fn(tape.value(out).shape(), |_| rng.random_range(-1.0..1.0));
    let grads = tape.backward_from(out, projection.clone());

    let objective = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        elements_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        if let Some(index) = analytic.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("analytic gradient of input {k}"),
                index,
            });
        }
        for e in 0..inputs[k].len() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + FD_STEP;
            let plus = objective(&work)?;
            work[k].data_mut()[e] = x0 - FD_STEP;
            let minus = objective(&work)?;
            work[k].data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("numeric gradient of input {k}"),
                    index: e,
                });
            }
            let a = analytic.data()[e];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(ElementIndex { input: k, element: e });
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// [`gradient_check`] on inputs drawn uniformly from `[-1, 1)` with the given shapes.
pub fn gradient_check_shapes<F>(f: F, shapes: &[&[usize]], seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0)))
        .collect();
    gradient_check(f, &inputs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // relu's derivative is 0 for negatives; feeding a tape op whose value is
        // then modified outside the tape breaks the analytic/numeric agreement.
        let report = gradient_check_shapes(
            |tape, v| {
                let y = tape.relu(v[0]);
                // scale the value by 2 but claim derivative 1 via a fresh leaf
                let doubled = tape.value(y).scale(2.0);
                let l = tape.leaf(doubled);
                tape.add(y, l)
            },
            &[&[1, 2, 2, 1]],
            3,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.5);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0 + 1e-9) - 1e-9).abs() < 1e-15);
    }
}
