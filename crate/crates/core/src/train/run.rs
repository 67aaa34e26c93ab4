use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_class_weights, pyramid_loss, sgd_step, TrainConfig};
use crate::backend::{Tape, Tensor};
use crate::checkpoint;
use crate::data::{random_crop, Batch, RgbdSample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{FsfNet, Mode, ModelConfig};
use crate::raster::{argmax_labels, LabelMap};

/// Everything the optimizer owns between steps.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: FsfNet<f32>,
    /// Momentum buffers keyed like the parameters.
    pub velocity: BTreeMap<String, Tensor<f32>>,
    pub step: usize,
    /// Step and validation mIoU of the best checkpoint so far.
    pub best: Option<(usize, f64)>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRow>,
    /// Parameters at the best validation mIoU, when validation ran.
    pub best_net: Option<FsfNet<f32>>,
}

const CSV_HEADER: &str = "step,lr,total_loss,l1,l2,l3";

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.step, r.lr, r.total_loss, r.l1, r.l2, r.l3).expect("string write");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Config(format!("{} lacks the history header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Config(format!("history line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
            Ok(HistoryRow {
                step: f[0].trim().parse().map_err(|_| bad())?,
                lr: num(1)?,
                total_loss: num(2)?,
                l1: num(3)?,
                l2: num(4)?,
                l3: num(5)?,
            })
        })
        .collect()
}

/// Full-resolution argmax predictions in eval mode.
pub fn predict(net: &FsfNet<f32>, samples: &[RgbdSample], batch_size: usize) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&RgbdSample> = chunk.iter().collect();
        let batch = Batch::<f32>::new(&refs)?;
        let inf = net.infer(&batch.rgb, &batch.hha, Mode::Eval)?;
        out.extend(argmax_labels(&inf.main_logits)?);
    }
    Ok(out)
}

/// Accumulates one confusion matrix over `samples`.
pub fn evaluate(net: &FsfNet<f32>, samples: &[RgbdSample], batch_size: usize) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut cm = ConfusionMatrix::new(net.config.num_classes);
    let preds = predict(net, samples, batch_size)?;
    for (p, s) in preds.iter().zip(samples) {
        cm.accumulate(p, &s.labels)?;
    }
    Ok(cm)
}

fn check_data(model: &ModelConfig, cfg: &TrainConfig, samples: &[RgbdSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if !cfg.crop_size.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "crop_size {} is not divisible by 16",
            cfg.crop_size
        )));
    }
    for s in samples {
        s.validate(model.num_classes)?;
        if s.width() < cfg.crop_size || s.height() < cfg.crop_size {
            return Err(Error::Dataset {
                stem: s.stem.clone(),
                reason: format!(
                    "{}x{} is smaller than crop_size {}",
                    s.width(),
                    s.height(),
                    cfg.crop_size
                ),
            });
        }
    }
    Ok(())
}

/// Seeded training loop. With `out_dir`, writes `history.csv`, `final.ckpt`,
/// `best.ckpt` (when validating) and `step_NNNNNN.ckpt` at the configured
/// cadence; a non-finite loss writes `last_good.ckpt` and stops.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    check_data(model, cfg, train_set)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let weights: Vec<f32> = compute_class_weights(train_set.iter().map(|s| &s.labels), model.num_classes)?
        .into_iter()
        .map(|w| w as f32)
        .collect();

    let mut state = TrainState {
        net: FsfNet::new(model.clone(), cfg.seed)?,
        velocity: BTreeMap::new(),
        step: 0,
        best: None,
        seed: cfg.seed,
    };
    let mut history = Vec::with_capacity(cfg.max_steps);
    let mut best_net = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = Vec::new();

    for step in 0..cfg.max_steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
            }
            let s = &train_set[order.pop().expect("refilled")];
            let mut s = random_crop(s, cfg.crop_size, rng.next_u64())?;
            if cfg.flip && rng.random_bool(0.5) {
                s = s.flip_horizontal();
            }
            picked.push(s);
        }
        let refs: Vec<&RgbdSample> = picked.iter().collect();
        let batch = Batch::<f32>::new(&refs)?;

        let mut tape = Tape::new();
        let vars = state.net.params.register(&mut tape);
        let rgb = tape.leaf(batch.rgb);
        let hha = tape.leaf(batch.hha);
        let (out, stats) = state.net.forward(&mut tape, &vars, rgb, hha, Mode::Train)?;
        let loss = pyramid_loss(&mut tape, &out, &batch.labels, &weights, cfg.lambda)?;
        let total = tape.value(loss.total).item() as f64;
        if !total.is_finite() {
            if let Some(dir) = out_dir {
                checkpoint::save(&dir.join("last_good.ckpt"), &state.net, cfg.seed, step)?;
            }
            return Err(Error::NonFinite {
                context: format!("loss at step {step} (last finite parameters kept)"),
                index: 0,
            });
        }
        let terms = loss.terms.map(|t| tape.value(t).item() as f64);
        let mut grads = tape.backward(loss.total);
        let grads: BTreeMap<String, Tensor<f32>> = vars
            .vars
            .iter()
            .filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g)))
            .collect();
        let lr = cfg.learning_rate(step)?;
        let stepped = sgd_step(
            &mut state.net.params.params,
            &mut state.velocity,
            &grads,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
        if let Err(e) = stepped {
            if let (Error::NonFinite { .. }, Some(dir)) = (&e, out_dir) {
                checkpoint::save(&dir.join("last_good.ckpt"), &state.net, cfg.seed, step)?;
            }
            return Err(e);
        }
        state.net.update_running_stats(&stats)?;
        state.step = step + 1;
        history.push(HistoryRow {
            step,
            lr,
            total_loss: total,
            l1: terms[0],
            l2: terms[1],
            l3: terms[2],
        });

        if cfg.eval_every > 0 && state.step.is_multiple_of(cfg.eval_every) && !val_set.is_empty() {
            let miou = evaluate(&state.net, val_set, cfg.batch_size)?.mean_iou()?;
            if state.best.is_none_or(|(_, b)| miou > b) {
                state.best = Some((state.step, miou));
                if let Some(dir) = out_dir {
                    checkpoint::save(&dir.join("best.ckpt"), &state.net, cfg.seed, state.step)?;
                }
                best_net = Some(state.net.clone());
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && state.step.is_multiple_of(cfg.checkpoint_every) {
                let name = format!("step_{:06}.ckpt", state.step);
                checkpoint::save(&dir.join(name), &state.net, cfg.seed, state.step)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        checkpoint::save(&dir.join("final.ckpt"), &state.net, cfg.seed, state.step)?;
        write_history_csv(&dir.join("history.csv"), &history)?;
    }
    Ok(TrainOutcome {
        state,
        history,
        best_net,
    })
}
