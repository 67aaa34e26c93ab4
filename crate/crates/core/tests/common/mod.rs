//! Fixtures shared by the gradient tests and the acceptance harness.
#![allow(dead_code)]

use fsfnet::backend::{gradient_check, GradCheckReport, Tape, Tensor, UpsampleMode, Var};
use fsfnet::model::{FsfNet, Mode, ModelConfig, ParamVars};

pub type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> fsfnet::Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: OpFn,
}

fn case(
    name: &'static str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> fsfnet::Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        f: Box::new(f),
    }
}

/// One entry per differentiable backend operator.
pub fn op_cases() -> Vec<OpCase> {
    let labels = [0u8, 2, 1, 255];
    let weights = [0.5, 1.0, 2.0];
    let (mean, var) = ([0.1, -0.2, 0.3], [0.5, 1.5, 2.0]);
    vec![
        case("conv3x3", &[&[2, 5, 4, 3], &[4, 3, 3, 3], &[4]], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        }),
        case("conv3x3 stride 2", &[&[1, 6, 6, 2], &[3, 2, 3, 3]], |t, v| {
            t.conv2d(v[0], v[1], None, 2, 1)
        }),
        case("conv1x1", &[&[2, 3, 3, 5], &[2, 5, 1, 1], &[2]], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 1, 0)
        }),
        case("maxpool", &[&[2, 4, 6, 3]], |t, v| t.max_pool(v[0], 2)),
        case("nearest", &[&[1, 3, 2, 2]], |t, v| {
            t.upsample(v[0], 2, UpsampleMode::Nearest)
        }),
        case("bilinear", &[&[2, 3, 4, 2]], |t, v| {
            t.upsample(v[0], 2, UpsampleMode::Bilinear)
        }),
        case("bilinear x4", &[&[1, 2, 2, 1]], |t, v| {
            t.upsample(v[0], 4, UpsampleMode::Bilinear)
        }),
        case("sigmoid", &[&[1, 3, 3, 2]], |t, v| Ok(t.sigmoid(v[0]))),
        case("weighted ce", &[&[1, 2, 2, 3]], move |t, v| {
            t.cross_entropy(v[0], &labels, &weights, 255)
        }),
        case("concat", &[&[1, 2, 3, 1], &[1, 2, 3, 2], &[1, 2, 3, 3]], |t, v| {
            t.concat(&[v[0], v[1], v[2]])
        }),
        case("add", &[&[2, 2, 2, 2], &[2, 2, 2, 2]], |t, v| t.add(v[0], v[1])),
        case("scale", &[&[1, 2, 2, 2]], |t, v| Ok(t.scale(v[0], -1.5))),
        case("relu", &[&[1, 3, 3, 2]], |t, v| Ok(t.relu(v[0]))),
        case("spatial gate", &[&[2, 3, 3, 4], &[2, 3, 3, 1]], |t, v| {
            t.mul_spatial(v[0], v[1])
        }),
        case("channel mean", &[&[1, 3, 3, 4]], |t, v| t.channel_mean(v[0])),
        case("channel max", &[&[1, 3, 3, 4]], |t, v| t.channel_max(v[0])),
        case("bn train", &[&[2, 3, 3, 4], &[4], &[4]], |t, v| {
            Ok(t.batch_norm_train(v[0], v[1], v[2])?.0)
        }),
        case("bn eval", &[&[1, 2, 2, 3], &[3], &[3]], move |t, v| {
            t.batch_norm_eval(v[0], v[1], v[2], &mean, &var)
        }),
    ]
}

/// Full-network check at 1x16x16 with three classes: inputs and every
/// parameter are perturbed. Eval mode and nonzero biases keep every ReLU away
/// from its kink at the finite-difference step.
pub fn full_model_check(seed: u64) -> GradCheckReport {
    let cfg = ModelConfig {
        channel_widths: vec![4, 4, 4, 4],
        input_size: 16,
        num_classes: 3,
        ..ModelConfig::default()
    };
    let mut net = FsfNet::<f64>::new(cfg, seed).unwrap();
    let mut k = 0usize;
    for (name, t) in net.params.params.iter_mut() {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                k += 1;
                *v = (k as f64 * 1.618).fract() * 0.2 - 0.1;
            }
        }
    }
    let names: Vec<String> = net.params.params.keys().cloned().collect();
    let mut inputs = vec![
        Tensor::from_fn(&[1, 16, 16, 3], |i| (i as f64 * 0.377).sin()),
        Tensor::from_fn(&[1, 16, 16, 3], |i| (i as f64 * 0.713).cos()),
    ];
    inputs.extend(net.params.params.values().cloned());
    let labels: Vec<u8> = (0..256).map(|i| (i * 7 % 3) as u8).collect();
    gradient_check(
        |tape, v| {
            let pv = ParamVars::from_pairs(names.iter().cloned().zip(v[2..].iter().copied()));
            let (out, _) = net.forward(tape, &pv, v[0], v[1], Mode::Eval)?;
            tape.cross_entropy(out.main_logits, &labels, &[1.0, 0.5, 2.0], 255)
        },
        &inputs,
        seed,
    )
    .unwrap()
}
