use std::collections::BTreeMap;

use super::params::ParamVars;
use crate::backend::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Whether batch norm uses batch statistics or the running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnStat<T> {
    pub prefix: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of elements each statistic was computed over.
    pub count: usize,
}

/// Forward-pass context: the tape being recorded plus the model's named
/// parameters and buffers.
pub struct Graph<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamVars,
    pub buffers: &'a BTreeMap<String, Tensor<T>>,
    pub mode: Mode,
    pub bn_stats: Vec<BnStat<T>>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        params: &'a ParamVars,
        buffers: &'a BTreeMap<String, Tensor<T>>,
        mode: Mode,
    ) -> Self {
        Graph {
            tape,
            params,
            buffers,
            mode,
            bn_stats: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub(crate) fn dims(&self, v: Var) -> Result<[usize; 4]> {
        self.value(v).dims4()
    }

    /// Convolution using `{prefix}.weight` and, when `bias`, `{prefix}.bias`.
    pub fn conv(&mut self, prefix: &str, x: Var, stride: usize, pad: usize, bias: bool) -> Result<Var> {
        let w = self.params.get(&format!("{prefix}.weight"))?;
        let b = if bias {
            Some(self.params.get(&format!("{prefix}.bias"))?)
        } else {
            None
        };
        self.tape.conv2d(x, w, b, stride, pad)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.params.get(&format!("{prefix}.weight"))?;
        let beta = self.params.get(&format!("{prefix}.bias"))?;
        match self.mode {
            Mode::Train => {
                let count = self.value(x).len() / self.value(x).channels();
                let (y, mean, var) = self.tape.batch_norm_train(x, gamma, beta)?;
                self.bn_stats.push(BnStat {
                    prefix: prefix.to_string(),
                    mean,
                    var,
                    count,
                });
                Ok(y)
            }
            Mode::Eval => {
                let get = |name: &str| {
                    self.buffers
                        .get(&format!("{prefix}.{name}"))
                        .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {prefix}.{name}")))
                };
                let mean = get("running_mean")?.data().to_vec();
                let var = get("running_var")?.data().to_vec();
                self.tape.batch_norm_eval(x, gamma, beta, &mean, &var)
            }
        }
    }

    /// 3x3 convolution (no bias), batch norm, ReLU. With stride 1 this is the
    /// `f_conv` block used by the fusion residuals and the decoder.
    pub fn conv_bn_relu(&mut self, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(&format!("{prefix}.conv"), x, stride, 1, false)?;
        let y = self.batch_norm(&format!("{prefix}.bn"), y)?;
        Ok(self.tape.relu(y))
    }

    /// Two 3x3 conv/BN layers with an identity shortcut.
    pub fn residual_block(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let y = self.conv(&format!("{prefix}.conv1"), x, 1, 1, false)?;
        let y = self.batch_norm(&format!("{prefix}.bn1"), y)?;
        let y = self.tape.relu(y);
        let y = self.conv(&format!("{prefix}.conv2"), y, 1, 1, false)?;
        let y = self.batch_norm(&format!("{prefix}.bn2"), y)?;
        let y = self.tape.add(y, x)?;
        Ok(self.tape.relu(y))
    }
}
