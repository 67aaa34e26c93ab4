use std::collections::BTreeMap;

use fsfnet::backend::{Tape, Tensor};
use fsfnet::checkpoint;
use fsfnet::data::{synth_dataset, SceneConfig};
use fsfnet::metrics::ConfusionMatrix;
use fsfnet::model::{ForwardOutput, FsfNet, Mode, ModelConfig};
use fsfnet::raster::{LabelMap, IGNORE_LABEL};
use fsfnet::train::{
    evaluate, load_history_csv, predict, pyramid_loss, train, write_history_csv, TrainConfig, PYRAMID_FACTORS,
};
use fsfnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model(classes: usize) -> ModelConfig {
    ModelConfig {
        channel_widths: vec![4, 8, 8, 8],
        num_classes: classes,
        input_size: 32,
        ..ModelConfig::default()
    }
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        batch_size: 2,
        crop_size: 32,
        lr_init: 0.05,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn scenes(count: usize) -> Vec<fsfnet::data::RgbdSample> {
    let cfg = SceneConfig {
        image_size: 40,
        num_classes: 4,
        ..SceneConfig::default()
    };
    synth_dataset(&cfg, count).unwrap()
}

/// Mean over non-ignored pixels of `-w[y] * log softmax(z)[y]`, computed directly.
fn ce_oracle(logits: &Tensor<f64>, labels: &[u8], w: &[f64]) -> f64 {
    let k = *logits.shape().last().unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, &y) in labels.iter().enumerate() {
        if y == IGNORE_LABEL {
            continue;
        }
        let z = &logits.data()[p * k..(p + 1) * k];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        sum += w[y as usize] * (lse - z[y as usize]);
        n += 1;
    }
    sum / n as f64
}

fn nearest_down(l: &LabelMap, f: usize) -> Vec<u8> {
    let (w, h) = (l.width / f, l.height / f);
    (0..w * h).map(|i| l.get((i % w) * f, (i / w) * f)).collect()
}

struct Fixture {
    logits: Vec<Tensor<f64>>,
    labels: Vec<LabelMap>,
}

fn fixture(k: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = [16, 8, 4, 2]
        .into_iter()
        .map(|s| Tensor::from_fn(&[2, s, s, k], |_| rng.random_range(-3.0..3.0)))
        .collect();
    let labels = (0..2)
        .map(|_| {
            let data = (0..256)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        IGNORE_LABEL
                    } else {
                        rng.random_range(0..k as u8)
                    }
                })
                .collect();
            LabelMap::new(16, 16, data).unwrap()
        })
        .collect();
    Fixture { logits, labels }
}

fn loss_of(fx: &Fixture, weights: &[f64], lambda: [f64; 3]) -> (f64, [f64; 3]) {
    let mut tape = Tape::<f64>::new();
    let v: Vec<_> = fx.logits.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = ForwardOutput {
        main_logits: v[0],
        side_logits: [v[1], v[2], v[3]],
        intermediates: BTreeMap::new(),
    };
    let loss = pyramid_loss(&mut tape, &out, &fx.labels, weights, lambda).unwrap();
    (tape.value(loss.total).item(), loss.terms.map(|t| tape.value(t).item()))
}

#[test]
fn pyramid_terms_match_direct_cross_entropy() {
    let fx = fixture(4, 1);
    let w = [1.0, 0.5, 2.0, 0.25];
    let (total, terms) = loss_of(&fx, &w, [1.0, 0.3, 0.7]);
    let sources = [&fx.logits[0], &fx.logits[2], &fx.logits[3]];
    for i in 0..3 {
        let labels: Vec<u8> = fx
            .labels
            .iter()
            .flat_map(|l| nearest_down(l, PYRAMID_FACTORS[i]))
            .collect();
        let expect = ce_oracle(sources[i], &labels, &w);
        assert!((terms[i] - expect).abs() < 1e-12, "term {i}: {} vs {expect}", terms[i]);
    }
    assert!((total - (terms[0] + 0.3 * terms[1] + 0.7 * terms[2])).abs() < 1e-12);
}

#[test]
fn uniform_logits_give_log_k_per_term() {
    let mut fx = fixture(2, 2);
    for t in &mut fx.logits {
        *t = Tensor::zeros(t.shape());
    }
    let (total, terms) = loss_of(&fx, &[1.0, 1.0], [1.0, 0.5, 0.0]);
    for t in terms {
        assert!((t - 2f64.ln()).abs() < 1e-12);
    }
    assert!((total - 1.5 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn pyramid_loss_is_linear_in_lambda() {
    let fx = fixture(3, 3);
    let w = [1.0, 2.0, 0.5];
    let (a, b) = ([1.0, 0.0, 0.5], [0.2, 1.5, 0.0]);
    let mix = [
        2.0 * a[0] + 3.0 * b[0],
        2.0 * a[1] + 3.0 * b[1],
        2.0 * a[2] + 3.0 * b[2],
    ];
    let (la, _) = loss_of(&fx, &w, a);
    let (lb, _) = loss_of(&fx, &w, b);
    let (lm, _) = loss_of(&fx, &w, mix);
    assert!((lm - (2.0 * la + 3.0 * lb)).abs() < 1e-12);
    assert_eq!(loss_of(&fx, &w, [0.0; 3]).0, 0.0);
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = tiny_model(4);
    let net = FsfNet::<f64>::new(cfg, 2).unwrap();
    let data = scenes(2);
    let cropped: Vec<_> = data.iter().map(|s| s.crop(0, 0, 32, 32)).collect();
    let refs: Vec<_> = cropped.iter().collect();
    let batch = fsfnet::data::Batch::<f64>::new(&refs).unwrap();
    let mut tape = Tape::new();
    let vars = net.params.register(&mut tape);
    let (rgb, hha) = (tape.leaf(batch.rgb), tape.leaf(batch.hha));
    let (out, _) = net.forward(&mut tape, &vars, rgb, hha, Mode::Train).unwrap();
    let loss = pyramid_loss(&mut tape, &out, &batch.labels, &[1.0; 4], [1.0; 3]).unwrap();
    let grads = tape.backward(loss.total);
    for (path, &v) in &vars.vars {
        let g = grads.get(v).unwrap_or_else(|| panic!("{path} has no gradient"));
        assert!(g.data().iter().any(|&x| x != 0.0), "{path} gradient is all zero");
    }
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let data = scenes(4);
    let a = train(&tiny_model(4), &tiny_train(40), &data, &[], None).unwrap();
    let b = train(&tiny_model(4), &tiny_train(40), &data, &[], None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.state.net, b.state.net);
    let head: f64 = a.history[..5].iter().map(|r| r.total_loss).sum();
    let tail: f64 = a.history[35..].iter().map(|r| r.total_loss).sum();
    assert!(tail < head, "loss went from {head} to {tail}");
    let other = train(
        &tiny_model(4),
        &TrainConfig {
            seed: 6,
            ..tiny_train(40)
        },
        &data,
        &[],
        None,
    )
    .unwrap();
    assert_ne!(a.history, other.history);
}

#[test]
fn zero_lambda_leaves_only_weight_decay() {
    let data = scenes(2);
    let cfg = TrainConfig {
        lambda: [0.0; 3],
        ..tiny_train(1)
    };
    let out = train(&tiny_model(4), &cfg, &data, &[], None).unwrap();
    assert_eq!(out.history[0].total_loss, 0.0);
    let init = FsfNet::<f32>::new(tiny_model(4), cfg.seed).unwrap();
    let (lr, wd) = (cfg.lr_init as f32, cfg.weight_decay as f32);
    for (path, p0) in &init.params.params {
        let p1 = &out.state.net.params.params[path];
        for (a, b) in p0.data().iter().zip(p1.data()) {
            assert_eq!(*b, a - lr * (wd * a), "{path}");
        }
    }
}

#[test]
fn history_csv_round_trips() {
    let data = scenes(2);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny_model(4), &tiny_train(3), &data, &[], Some(dir.path())).unwrap();
    assert_eq!(load_history_csv(&dir.path().join("history.csv")).unwrap(), out.history);
    let path = dir.path().join("h.csv");
    write_history_csv(&path, &out.history).unwrap();
    assert_eq!(load_history_csv(&path).unwrap(), out.history);
    std::fs::write(&path, "step,lr\n0,1\n").unwrap();
    assert!(load_history_csv(&path).is_err());
}

#[test]
fn validation_writes_best_checkpoint() {
    let data = scenes(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        eval_every: 2,
        checkpoint_every: 3,
        ..tiny_train(6)
    };
    let val = [data[3].crop(0, 0, 32, 32)];
    let out = train(&tiny_model(4), &cfg, &data[..3], &val, Some(dir.path())).unwrap();
    let (step, miou) = out.state.best.unwrap();
    assert!(step % 2 == 0 && (0.0..=1.0).contains(&miou));
    let (best, manifest) = checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(manifest.step, step);
    assert_eq!(Some(best), out.best_net);
    for f in ["step_000003.ckpt", "step_000006.ckpt", "final.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn divergence_keeps_last_finite_parameters() {
    let data = scenes(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr_init: 1e30,
        ..tiny_train(20)
    };
    let err = train(&tiny_model(4), &cfg, &data, &[], Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    let (net, _) = checkpoint::load(&dir.path().join("last_good.ckpt")).unwrap();
    for (path, t) in &net.params.params {
        assert!(t.first_non_finite().is_none(), "{path}");
    }
}

#[test]
fn bad_training_inputs_are_rejected() {
    let data = scenes(2);
    assert!(matches!(
        train(&tiny_model(4), &tiny_train(1), &[], &[], None),
        Err(Error::Empty(_))
    ));
    let big = TrainConfig {
        crop_size: 48,
        ..tiny_train(1)
    };
    assert!(matches!(
        train(&tiny_model(4), &big, &data, &[], None),
        Err(Error::Dataset { .. })
    ));
    let odd = TrainConfig {
        crop_size: 24,
        ..tiny_train(1)
    };
    assert!(train(&tiny_model(4), &odd, &data, &[], None).is_err());
    assert!(train(&tiny_model(3), &tiny_train(1), &data, &[], None).is_err());
}

#[test]
fn evaluate_matches_recount_of_predictions() {
    let data: Vec<_> = scenes(5).iter().map(|s| s.crop(4, 4, 32, 32)).collect();
    let net = FsfNet::<f32>::new(tiny_model(4), 8).unwrap();
    let cm = evaluate(&net, &data, 2).unwrap();
    let preds = predict(&net, &data, 3).unwrap();
    let mut counts = vec![0u64; 16];
    for (p, s) in preds.iter().zip(&data) {
        for (&a, &t) in p.data.iter().zip(&s.labels.data) {
            if t != IGNORE_LABEL {
                counts[t as usize * 4 + a as usize] += 1;
            }
        }
    }
    assert_eq!(cm, ConfusionMatrix::from_counts(4, counts).unwrap());
    assert!(matches!(evaluate(&net, &[], 2), Err(Error::Empty(_))));
}
