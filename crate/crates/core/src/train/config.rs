use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LrSchedule, TrainConfig};
use crate::data::{load_dataset, split_indices, synth_scene, RgbdSample, SceneConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Flat run description read by the command-line tool. Model, optimizer and
/// scene settings live side by side; the model's input size is `crop_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub channel_widths: Vec<usize>,
    pub num_classes: usize,
    pub use_scrf: bool,
    pub use_dfp: bool,

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
    pub eval_every: usize,
    pub checkpoint_every: usize,

    pub image_size: usize,
    pub shapes_per_scene: [usize; 2],
    pub depth_range: [f32; 2],
    pub rgb_noise_sigma: f32,
    pub scene_seed: u64,

    /// Directory in the on-disk dataset layout; synthetic scenes are used when unset.
    pub data_dir: Option<PathBuf>,
    /// Synthetic scenes `0..train_count` form the training pool.
    pub train_count: usize,
    /// Synthetic scenes `train_count..train_count + test_count` form the test set.
    pub test_count: usize,
    /// Fraction of the training pool held out for validation.
    pub val_fraction: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let s = SceneConfig::default();
        RunConfig {
            channel_widths: m.channel_widths,
            num_classes: m.num_classes,
            use_scrf: m.use_scrf,
            use_dfp: m.use_dfp,
            lr_init: t.lr_init,
            lr_power: t.lr_power,
            lr_schedule: t.lr_schedule,
            lr_decay_steps: t.lr_decay_steps,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            lambda: t.lambda,
            crop_size: t.crop_size,
            flip: t.flip,
            seed: t.seed,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            image_size: s.image_size,
            shapes_per_scene: s.shapes_per_scene,
            depth_range: s.depth_range,
            rgb_noise_sigma: s.rgb_noise_sigma,
            scene_seed: s.seed,
            data_dir: None,
            train_count: 64,
            test_count: 16,
            val_fraction: 0.2,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides. Values are parsed as JSON, falling back
    /// to a plain string (so `out_dir=runs/a` works unquoted).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut map = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!("RunConfig serializes to an object"),
        };
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let k = k.trim();
            if !map.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            let v = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
            map.insert(k.to_string(), v);
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            channel_widths: self.channel_widths.clone(),
            num_classes: self.num_classes,
            use_scrf: self.use_scrf,
            use_dfp: self.use_dfp,
            input_size: self.crop_size,
            ..ModelConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr_init: self.lr_init,
            lr_power: self.lr_power,
            lr_schedule: self.lr_schedule,
            lr_decay_steps: self.lr_decay_steps,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            lambda: self.lambda,
            crop_size: self.crop_size,
            flip: self.flip,
            seed: self.seed,
            eval_every: self.eval_every,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            image_size: self.image_size,
            num_classes: self.num_classes,
            shapes_per_scene: self.shapes_per_scene,
            depth_range: self.depth_range,
            rgb_noise_sigma: self.rgb_noise_sigma,
            seed: self.scene_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        if self.data_dir.is_none() {
            self.scene().validate()?;
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// (train, validation, test) samples. A dataset directory is split into
    /// train and validation only; its test set is empty.
    pub fn datasets(&self) -> Result<(Vec<RgbdSample>, Vec<RgbdSample>, Vec<RgbdSample>)> {
        let (pool, test) = match &self.data_dir {
            Some(dir) => (load_dataset(dir)?, Vec::new()),
            None => {
                let scene = self.scene();
                let pool = (0..self.train_count)
                    .map(|i| synth_scene(&scene, i))
                    .collect::<Result<_>>()?;
                let test = (self.train_count..self.train_count + self.test_count)
                    .map(|i| synth_scene(&scene, i))
                    .collect::<Result<_>>()?;
                (pool, test)
            }
        };
        let (train_idx, val_idx) = split_indices(pool.len(), self.val_fraction, self.seed);
        let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
        Ok((pick(&train_idx), pick(&val_idx), test))
    }
}
