//! Symmetric cross-modality residual fusion.
//!
//! At layer `j` each modality contributes a 1x1-selected feature to the other
//! modality's residual branch:
//!
//! ```text
//! S_hha = select_hha(F_hha)        S_rgb = select_rgb(F_rgb)
//! R_rgb = f_conv(S_hha + F_rgb)    R_hha = f_conv(S_rgb + F_hha)
//! F_fuse^j = project([maxpool(F_fuse^{j-1}), R_rgb, R_hha])
//! ```
//!
//! The first layer has no previous fused feature and concatenates only the two
//! residual branches. The modality features are only read, never replaced.

use super::graph::Graph;
use crate::backend::{Scalar, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Hha,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Hha => "hha",
        }
    }
}

/// Result of one fusion layer.
#[derive(Clone, Copy, Debug)]
pub struct ScrfFusion {
    /// Concatenation before the 1x1 projection (two or three parts).
    pub concat: Var,
    /// `F_fuse^j`.
    pub fused: Var,
    pub residual_rgb: Var,
    pub residual_hha: Var,
}

/// Selected and raw modality features entering [`Graph::scrf_fuse`].
#[derive(Clone, Copy, Debug)]
pub struct ScrfInputs {
    pub s_hha: Var,
    pub f_rgb: Var,
    pub s_rgb: Var,
    pub f_hha: Var,
}

impl<T: Scalar> Graph<'_, T> {
    /// 1x1 stride-1 selection applied to features of `source`: `select_hha`
    /// yields `S_hha` from `F_hha`, `select_rgb` yields `S_rgb` from `F_rgb`.
    pub fn scrf_select(&mut self, layer: usize, f: Var, source: Modality) -> Result<Var> {
        self.conv(&format!("fusion.scrf{layer}.select_{}", source.name()), f, 1, 0, true)
    }

    /// `f_conv(s_other + f_own)`, shared by both fusion directions.
    pub fn cross_modal_residual(&mut self, prefix: &str, f_own: Var, s_other: Var) -> Result<Var> {
        let (a, b) = (self.dims(f_own)?, self.dims(s_other)?);
        if a != b {
            return Err(Error::shape(
                "cross_modal_residual",
                format!("{prefix}: {a:?} vs {b:?}"),
            ));
        }
        let sum = self.tape.add(s_other, f_own)?;
        self.conv_bn_relu(prefix, sum, 1)
    }

    pub fn scrf_fuse(&mut self, layer: usize, inputs: ScrfInputs, prev: Option<Var>) -> Result<ScrfFusion> {
        let ScrfInputs {
            s_hha,
            f_rgb,
            s_rgb,
            f_hha,
        } = inputs;
        let reference = self.dims(f_rgb)?;
        for (name, v) in [("S_hha", s_hha), ("S_rgb", s_rgb), ("F_hha", f_hha)] {
            let d = self.dims(v)?;
            if d != reference {
                return Err(Error::shape(
                    "scrf_fuse",
                    format!("layer {layer}: {name} is {d:?} but F_rgb is {reference:?}"),
                ));
            }
        }
        match (layer, prev) {
            (1, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "scrf_fuse layer 1 takes no previous fused feature".into(),
                ))
            }
            (j, None) if j != 1 => {
                return Err(Error::InvalidArgument(format!(
                    "scrf_fuse layer {j} requires the previous fused feature"
                )))
            }
            _ => {}
        }

        let prefix = format!("fusion.scrf{layer}");
        let residual_rgb = self.cross_modal_residual(&format!("{prefix}.residual_rgb"), f_rgb, s_hha)?;
        let residual_hha = self.cross_modal_residual(&format!("{prefix}.residual_hha"), f_hha, s_rgb)?;
        let mut parts = Vec::with_capacity(3);
        if let Some(prev) = prev {
            let [n, h, w, _] = self.dims(prev)?;
            if n != reference[0] || h != 2 * reference[1] || w != 2 * reference[2] {
                return Err(Error::shape(
                    "scrf_fuse",
                    format!(
                        "layer {layer}: previous fused feature is {:?}, expected twice the extent of {reference:?}",
                        [n, h, w]
                    ),
                ));
            }
            parts.push(self.tape.max_pool(prev, 2)?);
        }
        parts.push(residual_rgb);
        parts.push(residual_hha);
        let concat = self.tape.concat(&parts)?;
        let fused = self.conv(&format!("{prefix}.project"), concat, 1, 0, true)?;
        Ok(ScrfFusion {
            concat,
            fused,
            residual_rgb,
            residual_hha,
        })
    }

    /// Selection followed by fusion for layer `layer`.
    pub fn scrf(&mut self, layer: usize, f_rgb: Var, f_hha: Var, prev: Option<Var>) -> Result<ScrfFusion> {
        let s_hha = self.scrf_select(layer, f_hha, Modality::Hha)?;
        let s_rgb = self.scrf_select(layer, f_rgb, Modality::Rgb)?;
        self.scrf_fuse(
            layer,
            ScrfInputs {
                s_hha,
                f_rgb,
                s_rgb,
                f_hha,
            },
            prev,
        )
    }
}
