//! Finite-difference checks of every differentiable operator.

use fsfnet::backend::gradcheck::relative_error;
use fsfnet::backend::{gradient_check_shapes, ops, Tape, Tensor};

mod common;

const TOL: f64 = 1e-4;

fn check(
    name: &str,
    f: impl Fn(&mut Tape<f64>, &[fsfnet::backend::Var]) -> fsfnet::Result<fsfnet::backend::Var>,
    shapes: &[&[usize]],
) {
    for seed in 0..3 {
        let r = gradient_check_shapes(&f, shapes, seed).unwrap();
        assert!(r.max_rel_error < TOL, "{name} seed {seed}: {:?}", r);
    }
}

#[test]
fn every_operator_matches_finite_differences() {
    for c in common::op_cases() {
        let shapes: Vec<&[usize]> = c.shapes.iter().map(Vec::as_slice).collect();
        check(c.name, &c.f, &shapes);
    }
}

#[test]
fn conv_with_fixed_weights_is_exact_in_input() {
    let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 5 % 7) as f64) * 0.2 - 0.6);
    let r = gradient_check_shapes(
        |t, v| {
            let wv = t.leaf(w.clone());
            t.conv2d(v[0], wv, None, 1, 1)
        },
        &[&[1, 4, 4, 2]],
        11,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-7, "{r:?}");
}

#[test]
fn sigmoid_gradient_at_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]));
    let y = tape.sigmoid(x);
    let g = tape.backward(y);
    let analytic = g.get(x).unwrap().item();
    assert_eq!(analytic, 0.25);
    let h = 1e-5;
    let numeric = (ops::sigmoid_scalar(h) - ops::sigmoid_scalar(-h)) / (2.0 * h);
    assert!(relative_error(analytic, numeric) < 1e-6);
    check("sigmoid", |t, v| Ok(t.sigmoid(v[0])), &[&[1, 3, 3, 2]]);
}
