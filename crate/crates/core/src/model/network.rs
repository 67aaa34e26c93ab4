use std::collections::BTreeMap;

use super::config::{ModelConfig, DFP_LAYERS, NUM_LAYERS};
use super::graph::{BnStat, Graph, Mode};
use super::params::{ParamStore, ParamVars};
use crate::backend::{Scalar, Tape, Tensor, UpsampleMode, Var};
use crate::error::{Error, Result};

/// Running-statistic momentum for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-layer encoder outputs; index `j - 1` holds layer `j`.
#[derive(Clone, Debug)]
pub struct EncoderFeatures {
    pub rgb: Vec<Var>,
    pub hha: Vec<Var>,
    pub fuse: Vec<Var>,
    /// Pre-projection fusion concatenations (empty for the summation baseline).
    pub scrf_concat: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Logits at input resolution.
    pub main_logits: Var,
    /// Head logits at 1/2, 1/4 and 1/8 of the input resolution, in that order.
    pub side_logits: [Var; 3],
    /// Named intermediates: `rgb{j}`, `hha{j}`, `fuse{j}`, `scrf_concat{j}`,
    /// `dfp_attention{i}`, `dfp_selected{i}`, `decoder{s}`.
    pub intermediates: BTreeMap<String, Var>,
}

fn check_inputs(rgb: &Tensor<impl Scalar>, hha: &Tensor<impl Scalar>) -> Result<()> {
    let a = rgb.dims4()?;
    let b = hha.dims4()?;
    if a != b {
        return Err(Error::shape("encoder", format!("rgb {a:?} vs hha {b:?}")));
    }
    if a[3] != 3 {
        return Err(Error::shape("encoder", format!("inputs need 3 channels, got {}", a[3])));
    }
    let stride = 1 << NUM_LAYERS;
    if a[1] % stride != 0 || a[2] % stride != 0 {
        return Err(Error::shape(
            "encoder",
            format!("input extent {}x{} is not divisible by {stride}", a[1], a[2]),
        ));
    }
    Ok(())
}

impl<T: Scalar> Graph<'_, T> {
    fn modality_branch(&mut self, modality: &str, input: Var) -> Result<Vec<Var>> {
        let mut x = input;
        let mut out = Vec::with_capacity(NUM_LAYERS);
        for j in 1..=NUM_LAYERS {
            let stage = format!("encoder.{modality}.stage{j}");
            x = self.conv_bn_relu(&format!("{stage}.down"), x, 2)?;
            for b in 1..=2 {
                x = self.residual_block(&format!("{stage}.block{b}"), x)?;
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Two modality branches and the fusion branch. Without SCRF the fused
    /// feature of each layer is the element-wise sum of the two branches.
    pub fn encoder_forward(&mut self, cfg: &ModelConfig, rgb: Var, hha: Var) -> Result<EncoderFeatures> {
        check_inputs(self.value(rgb), self.value(hha))?;
        let rgb_feats = self.modality_branch("rgb", rgb)?;
        let hha_feats = self.modality_branch("hha", hha)?;
        let mut fuse = Vec::with_capacity(NUM_LAYERS);
        let mut scrf_concat = Vec::new();
        for j in 1..=NUM_LAYERS {
            let (fr, fh) = (rgb_feats[j - 1], hha_feats[j - 1]);
            if cfg.use_scrf {
                let prev = (j > 1).then(|| fuse[j - 2]);
                let f = self.scrf(j, fr, fh, prev)?;
                scrf_concat.push(f.concat);
                fuse.push(f.fused);
            } else {
                fuse.push(self.tape.add(fr, fh)?);
            }
        }
        Ok(EncoderFeatures {
            rgb: rgb_feats,
            hha: hha_feats,
            fuse,
            scrf_concat,
        })
    }

    /// Encoder, decoder with optional detail propagation, and the three heads.
    pub fn model_forward(&mut self, cfg: &ModelConfig, rgb: Var, hha: Var) -> Result<ForwardOutput> {
        let enc = self.encoder_forward(cfg, rgb, hha)?;
        let mut named = BTreeMap::new();
        for j in 1..=NUM_LAYERS {
            named.insert(format!("rgb{j}"), enc.rgb[j - 1]);
            named.insert(format!("hha{j}"), enc.hha[j - 1]);
            named.insert(format!("fuse{j}"), enc.fuse[j - 1]);
        }
        for (j, &c) in enc.scrf_concat.iter().enumerate() {
            named.insert(format!("scrf_concat{}", j + 1), c);
        }

        let mut x = self.conv_bn_relu("decoder.stem", enc.fuse[NUM_LAYERS - 1], 1)?;
        let mut heads = Vec::with_capacity(NUM_LAYERS - 1);
        for s in 1..NUM_LAYERS {
            let up = self.tape.upsample(x, 2, UpsampleMode::Bilinear)?;
            x = self.conv_bn_relu(&format!("decoder.stage{s}"), up, 1)?;
            let layer = NUM_LAYERS - s;
            if cfg.use_dfp && DFP_LAYERS.contains(&layer) {
                let sel = self.dfp_select(layer, enc.fuse[layer - 1])?;
                named.insert(format!("dfp_attention{layer}"), sel.attention);
                named.insert(format!("dfp_selected{layer}"), sel.selected);
                x = self.dfp_fuse(layer, sel.selected, x)?;
            }
            named.insert(format!("decoder{s}"), x);
            heads.push(self.conv(&format!("decoder.head{s}"), x, 1, 0, true)?);
        }
        let main_logits = self.tape.upsample(heads[2], 2, UpsampleMode::Bilinear)?;
        Ok(ForwardOutput {
            main_logits,
            side_logits: [heads[2], heads[1], heads[0]],
            intermediates: named,
        })
    }
}

/// Plain tensors produced by [`FsfNet::infer`].
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub main_logits: Tensor<T>,
    pub side_logits: Vec<Tensor<T>>,
    pub intermediates: BTreeMap<String, Tensor<T>>,
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FsfNet<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> FsfNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(FsfNet { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(FsfNet { config, params })
    }

    /// Records a forward pass on `tape` using the parameter handles in `vars`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        rgb: Var,
        hha: Var,
        mode: Mode,
    ) -> Result<(ForwardOutput, Vec<BnStat<T>>)> {
        let mut g = Graph::new(tape, vars, &self.params.buffers, mode);
        let out = g.model_forward(&self.config, rgb, hha)?;
        Ok((out, g.bn_stats))
    }

    /// Forward pass on a fresh tape, returning plain tensors.
    pub fn infer(&self, rgb: &Tensor<T>, hha: &Tensor<T>, mode: Mode) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let r = tape.leaf(rgb.clone());
        let h = tape.leaf(hha.clone());
        let (out, _) = self.forward(&mut tape, &vars, r, h, mode)?;
        Ok(Inference {
            main_logits: tape.value(out.main_logits).clone(),
            side_logits: out.side_logits.iter().map(|&v| tape.value(v).clone()).collect(),
            intermediates: out
                .intermediates
                .iter()
                .map(|(k, &v)| (k.clone(), tape.value(v).clone()))
                .collect(),
        })
    }

    /// Folds batch statistics from a training pass into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BnStat<T>]) -> Result<()> {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for s in stats {
            let unbias = if s.count > 1 {
                T::from_usize(s.count).unwrap() / T::from_usize(s.count - 1).unwrap()
            } else {
                T::one()
            };
            let mean = self
                .params
                .buffers
                .get_mut(&format!("{}.running_mean", s.prefix))
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {}.running_mean", s.prefix)))?;
            for (r, &b) in mean.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            let var = self
                .params
                .buffers
                .get_mut(&format!("{}.running_var", s.prefix))
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {}.running_var", s.prefix)))?;
            for (r, &b) in var.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FsfNet<U> {
        FsfNet {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
