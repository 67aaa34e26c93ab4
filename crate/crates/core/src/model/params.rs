//! Named parameter storage and the canonical parameter layout.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, DFP_LAYERS, NUM_LAYERS};
use crate::backend::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    Fan {
        gain: f64,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Every trainable tensor of a model built from `cfg`, plus the batch-norm
/// running-statistic buffers, in canonical path order.
pub fn layout(cfg: &ModelConfig) -> (Vec<ParamSpec>, Vec<ParamSpec>) {
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    let conv = |params: &mut Vec<ParamSpec>, p: &str, o: usize, i: usize, k: usize, bias: bool, gain: f64| {
        params.push(ParamSpec {
            path: format!("{p}.weight"),
            shape: vec![o, i, k, k],
            init: Init::Fan { gain },
        });
        if bias {
            params.push(ParamSpec {
                path: format!("{p}.bias"),
                shape: vec![o],
                init: Init::Zeros,
            });
        }
    };
    let bn = |params: &mut Vec<ParamSpec>, buffers: &mut Vec<ParamSpec>, p: &str, c: usize| {
        params.push(ParamSpec {
            path: format!("{p}.weight"),
            shape: vec![c],
            init: Init::Ones,
        });
        params.push(ParamSpec {
            path: format!("{p}.bias"),
            shape: vec![c],
            init: Init::Zeros,
        });
        buffers.push(ParamSpec {
            path: format!("{p}.running_mean"),
            shape: vec![c],
            init: Init::Zeros,
        });
        buffers.push(ParamSpec {
            path: format!("{p}.running_var"),
            shape: vec![c],
            init: Init::Ones,
        });
    };

    for modality in ["rgb", "hha"] {
        for j in 1..=NUM_LAYERS {
            let w = cfg.width(j);
            let cin = if j == 1 { 3 } else { cfg.width(j - 1) };
            let stage = format!("encoder.{modality}.stage{j}");
            conv(&mut params, &format!("{stage}.down.conv"), w, cin, 3, false, 2.0);
            bn(&mut params, &mut buffers, &format!("{stage}.down.bn"), w);
            for b in 1..=2 {
                for c in 1..=2 {
                    conv(&mut params, &format!("{stage}.block{b}.conv{c}"), w, w, 3, false, 2.0);
                    bn(&mut params, &mut buffers, &format!("{stage}.block{b}.bn{c}"), w);
                }
            }
        }
    }

    if cfg.use_scrf {
        for j in 1..=NUM_LAYERS {
            let w = cfg.width(j);
            let p = format!("fusion.scrf{j}");
            conv(&mut params, &format!("{p}.select_hha"), w, w, 1, true, 1.0);
            conv(&mut params, &format!("{p}.select_rgb"), w, w, 1, true, 1.0);
            for dir in ["residual_rgb", "residual_hha"] {
                conv(&mut params, &format!("{p}.{dir}.conv"), w, w, 3, false, 2.0);
                bn(&mut params, &mut buffers, &format!("{p}.{dir}.bn"), w);
            }
            let concat = if j == 1 { 2 * w } else { cfg.width(j - 1) + 2 * w };
            conv(&mut params, &format!("{p}.project"), w, concat, 1, true, 1.0);
        }
    }

    let top = cfg.width(NUM_LAYERS);
    conv(&mut params, "decoder.stem.conv", top, top, 3, false, 2.0);
    bn(&mut params, &mut buffers, "decoder.stem.bn", top);
    let mut cin = top;
    for s in 1..NUM_LAYERS {
        let out = cfg.decoder_width(s);
        conv(&mut params, &format!("decoder.stage{s}.conv"), out, cin, 3, false, 2.0);
        bn(&mut params, &mut buffers, &format!("decoder.stage{s}.bn"), out);
        conv(
            &mut params,
            &format!("decoder.head{s}"),
            cfg.num_classes,
            out,
            1,
            true,
            1.0,
        );
        cin = out;
    }

    if cfg.use_dfp {
        for i in DFP_LAYERS {
            let dec = cfg.decoder_width(NUM_LAYERS - i);
            conv(&mut params, &format!("dfp{i}.attention"), 1, 2, 1, true, 1.0);
            conv(
                &mut params,
                &format!("dfp{i}.project"),
                dec,
                cfg.width(i) + dec,
                1,
                true,
                1.0,
            );
        }
    }

    params.sort_by(|a, b| a.path.cmp(&b.path));
    buffers.sort_by(|a, b| a.path.cmp(&b.path));
    (params, buffers)
}

/// Stable 64-bit FNV-1a, used to derive a per-parameter RNG stream from its path.
fn path_hash(path: &str) -> u64 {
    path.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn init_tensor<T: Scalar>(spec: &ParamSpec, seed: u64) -> Tensor<T> {
    match spec.init {
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Ones => Tensor::full(&spec.shape, T::one()),
        Init::Fan { gain } => {
            let fan_in: usize = spec.shape[1..].iter().product();
            let std = (gain / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ path_hash(&spec.path));
            Tensor::from_fn(&spec.shape, |_| T::lit(normal.sample(&mut rng)))
        }
    }
}

/// Named tensors of one model: trainable parameters and non-trainable buffers.
///
/// Initialization draws each parameter from a stream keyed by `(seed, path)`,
/// so variants that share a parameter path start from identical values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let (params, buffers) = layout(cfg);
        ParamStore {
            params: params.iter().map(|s| (s.path.clone(), init_tensor(s, seed))).collect(),
            buffers: buffers.iter().map(|s| (s.path.clone(), init_tensor(s, seed))).collect(),
        }
    }

    pub fn param(&self, path: &str) -> Result<&Tensor<T>> {
        self.params
            .get(path)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {path}")))
    }

    pub fn param_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {path}")))
    }

    pub fn buffer(&self, path: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(path)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown buffer {path}")))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks that names and shapes match the layout for `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let (params, buffers) = layout(cfg);
        for (specs, map, kind) in [
            (&params, &self.params, "parameter"),
            (&buffers, &self.buffers, "buffer"),
        ] {
            if specs.len() != map.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} {kind}s, found {}",
                    specs.len(),
                    map.len()
                )));
            }
            for s in specs {
                match map.get(&s.path) {
                    Some(t) if t.shape() == s.shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Checkpoint(format!(
                            "{kind} {} has shape {:?}, expected {:?}",
                            s.path,
                            t.shape(),
                            s.shape
                        )))
                    }
                    None => return Err(Error::Checkpoint(format!("missing {kind} {}", s.path))),
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles of registered parameters, keyed by path.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    pub vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {path}")))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        ParamVars {
            vars: pairs.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_unique_and_sorted() {
        let (p, b) = layout(&ModelConfig::default());
        let mut names: Vec<&str> = p.iter().chain(&b).map(|s| s.path.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(p.iter().any(|s| s.path == "encoder.rgb.stage2.block1.conv1.weight"));
    }

    #[test]
    fn module_toggles_change_layout() {
        let full = ModelConfig::default();
        let (with, _) = layout(&full);
        let (without, _) = layout(&full.with_modules(false, false));
        assert!(with.iter().any(|s| s.path.starts_with("fusion.scrf1")));
        assert!(with.iter().any(|s| s.path.starts_with("dfp2")));
        assert!(!without
            .iter()
            .any(|s| s.path.starts_with("fusion") || s.path.starts_with("dfp")));
    }

    #[test]
    fn first_layer_projection_takes_two_parts() {
        let cfg = ModelConfig::default();
        let (p, _) = layout(&cfg);
        let shape = |path: &str| p.iter().find(|s| s.path == path).unwrap().shape.clone();
        assert_eq!(shape("fusion.scrf1.project.weight"), vec![16, 32, 1, 1]);
        assert_eq!(shape("fusion.scrf2.project.weight"), vec![32, 16 + 64, 1, 1]);
    }

    #[test]
    fn init_is_keyed_by_seed_and_path() {
        let cfg = ModelConfig::default();
        let a = ParamStore::<f32>::init(&cfg, 7);
        let b = ParamStore::<f32>::init(&cfg.with_modules(false, false), 7);
        let c = ParamStore::<f32>::init(&cfg, 8);
        let k = "encoder.hha.stage3.block2.conv1.weight";
        assert_eq!(a.param(k).unwrap(), b.param(k).unwrap());
        assert_ne!(a.param(k).unwrap(), c.param(k).unwrap());
        a.check_layout(&cfg).unwrap();
        assert!(b.check_layout(&cfg).is_err());
    }
}
