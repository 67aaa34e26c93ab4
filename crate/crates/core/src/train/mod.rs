//! Optimization: learning-rate schedules, the three-term pyramid loss, SGD
//! with momentum, class weighting, the training loop and the ablation harness.

mod ablate;
mod config;
mod run;

pub use ablate::{ablate, mean_std, AblationRow, AblationTable, VARIANTS};
pub use config::RunConfig;
pub use run::{evaluate, load_history_csv, predict, train, write_history_csv, HistoryRow, TrainOutcome, TrainState};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::raster::{LabelMap, IGNORE_LABEL};

/// Label downsampling factor of each supervised output: the full-resolution
/// main logits, then the 1/4 and 1/8 heads.
pub const PYRAMID_FACTORS: [usize; 3] = [1, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// `lr_init * (1 - step / max_steps)^lr_power`.
    Poly,
    /// `lr_init * lr_power^floor(step / lr_decay_steps)`.
    Exp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_power: f64,
    pub lr_schedule: LrSchedule,
    pub lr_decay_steps: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub lambda: [f64; 3],
    pub crop_size: usize,
    pub flip: bool,
    pub seed: u64,
    /// Validation cadence in steps; 0 disables validation.
    pub eval_every: usize,
    /// Periodic checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.02,
            lr_power: 0.9,
            lr_schedule: LrSchedule::Poly,
            lr_decay_steps: 100,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 4,
            max_steps: 500,
            lambda: [1.0; 3],
            crop_size: 64,
            flip: true,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0) {
            return Err(Error::Config(format!("lr_init must be positive, got {}", self.lr_init)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Config(format!(
                "lambda entries must be non-negative, got {:?}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Config("batch_size and max_steps must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.lr_power < 0.0 {
            return Err(Error::Config("weight_decay and lr_power must be non-negative".into()));
        }
        if self.lr_schedule == LrSchedule::Exp && self.lr_decay_steps == 0 {
            return Err(Error::Config(
                "lr_decay_steps must be positive for the exp schedule".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for `step` under the configured schedule.
    pub fn learning_rate(&self, step: usize) -> Result<f64> {
        match self.lr_schedule {
            LrSchedule::Poly => poly_lr(step, self.max_steps, self),
            LrSchedule::Exp => {
                if step > self.max_steps {
                    return Err(Error::InvalidArgument(format!(
                        "step {step} beyond max_steps {}",
                        self.max_steps
                    )));
                }
                Ok(self.lr_init * self.lr_power.powi((step / self.lr_decay_steps) as i32))
            }
        }
    }
}

pub fn poly_lr(step: usize, max_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > max_steps || max_steps == 0 {
        return Err(Error::InvalidArgument(format!("step {step} outside 0..={max_steps}")));
    }
    let remaining = 1.0 - step as f64 / max_steps as f64;
    Ok(cfg.lr_init * remaining.powf(cfg.lr_power))
}

/// Tape handles of the pyramid loss.
#[derive(Clone, Copy, Debug)]
pub struct PyramidLoss {
    pub total: Var,
    pub terms: [Var; 3],
}

/// `sum_i lambda_i * l_i`, where `l_i` is the weighted cross-entropy of the
/// `i`-th supervised output against labels downsampled by
/// [`PYRAMID_FACTORS`]`[i]`.
pub fn pyramid_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &ForwardOutput,
    labels: &[LabelMap],
    class_weights: &[T],
    lambda: [f64; 3],
) -> Result<PyramidLoss> {
    let logits = [out.main_logits, out.side_logits[1], out.side_logits[2]];
    let mut terms = [out.main_logits; 3];
    let mut total = None;
    for i in 0..3 {
        let mut flat = Vec::new();
        for l in labels {
            flat.extend(crate::data::downsample_labels(l, PYRAMID_FACTORS[i])?.data);
        }
        terms[i] = tape.cross_entropy(logits[i], &flat, class_weights, IGNORE_LABEL)?;
        let weighted = tape.scale(terms[i], T::lit(lambda[i]));
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    Ok(PyramidLoss {
        total: total.expect("three terms"),
        terms,
    })
}

/// One SGD step with coupled weight decay:
/// `v <- momentum * v + g + wd * p`, then `p <- p - lr * v`.
///
/// Every gradient is checked before any parameter changes, so a non-finite
/// gradient leaves the state untouched.
pub fn sgd_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    velocity: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (path, p) in params.iter() {
        if let Some(g) = grads.get(path) {
            p.same_shape("sgd_step", g)?;
            if let Some(i) = g.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {path}"),
                    index: i,
                });
            }
        }
    }
    let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for (path, p) in params.iter_mut() {
        let v = velocity.entry(path.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        p.same_shape("sgd_step", v)?;
        let g = grads.get(path);
        for i in 0..p.len() {
            let gi = g.map_or(T::zero(), |g| g.data()[i]);
            let vi = mu * v.data()[i] + gi + wd * p.data()[i];
            v.data_mut()[i] = vi;
            p.data_mut()[i] = p.data()[i] - lr * vi;
        }
    }
    Ok(())
}

/// Median-frequency balancing: `median(freq) / freq_c` over classes present
/// in `labels`; absent classes get weight 0.
pub fn compute_class_weights<'a>(
    labels: impl IntoIterator<Item = &'a LabelMap>,
    num_classes: usize,
) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; num_classes];
    for map in labels {
        for &l in &map.data {
            if l == IGNORE_LABEL {
                continue;
            }
            let slot = counts
                .get_mut(l as usize)
                .ok_or(Error::LabelOutOfRange { label: l, num_classes })?;
            *slot += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("labeled pixels for class weighting"));
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut present: Vec<f64> = freq.iter().copied().filter(|&f| f > 0.0).collect();
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 {
        present[m / 2]
    } else {
        0.5 * (present[m / 2 - 1] + present[m / 2])
    };
    Ok(freq.iter().map(|&f| if f > 0.0 { median / f } else { 0.0 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(poly_lr(0, 100, &cfg).unwrap(), 0.02);
        assert_eq!(poly_lr(100, 100, &cfg).unwrap(), 0.0);
        assert!((poly_lr(50, 100, &cfg).unwrap() - 0.0107177).abs() < 1e-7);
        assert!(poly_lr(101, 100, &cfg).is_err());
    }

    #[test]
    fn exp_schedule_steps_down() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::Exp,
            lr_decay_steps: 10,
            max_steps: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate(9).unwrap(), 0.02);
        assert!((cfg.learning_rate(25).unwrap() - 0.02 * 0.81).abs() < 1e-15);
    }

    fn one(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn sgd_hand_recurrence() {
        let (mut p, mut v) = (one(0.0), BTreeMap::new());
        for _ in 0..2 {
            sgd_step(&mut p, &mut v, &one(1.0), 0.1, 0.9, 0.0).unwrap();
        }
        assert!((p["p"].item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn sgd_degenerate_cases() {
        let (mut p, mut v) = (one(0.7), BTreeMap::new());
        sgd_step(&mut p, &mut v, &one(0.0), 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p["p"].item(), 0.7);
        sgd_step(&mut p, &mut v, &one(2.0), 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p["p"].item(), 0.7 - 0.1 * 2.0);
        let before = p.clone();
        sgd_step(&mut p, &mut v, &one(5.0), 0.0, 0.9, 0.1).unwrap();
        assert_eq!(p, before);
        let err = sgd_step(&mut p, &mut v, &one(f64::NAN), 0.1, 0.9, 0.0).unwrap_err();
        assert!(err.to_string().contains("gradient of p"));
        assert_eq!(p, before);
    }

    #[test]
    fn class_weights_by_median_frequency() {
        let m = LabelMap::new(5, 2, vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1]).unwrap();
        let w = compute_class_weights([&m], 3).unwrap();
        assert_eq!(w, vec![0.625, 2.5, 0.0]);
        assert_eq!(compute_class_weights([&m, &m], 3).unwrap(), w);
        let balanced = LabelMap::new(2, 2, vec![0, 1, 2, 255]).unwrap();
        assert_eq!(compute_class_weights([&balanced], 3).unwrap(), vec![1.0; 3]);
        assert!(compute_class_weights([&LabelMap::filled(2, 2, 255)], 3).is_err());
        assert!(compute_class_weights(std::iter::empty(), 3).is_err());
    }
}
