//! Detailed feature propagation: a spatial attention gate over fused encoder
//! features, concatenated into the decoder stage of matching resolution.

use super::graph::Graph;
use crate::backend::{Scalar, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct DfpSelection {
    /// `(n, h, w, 1)` gate in `(0, 1)`.
    pub attention: Var,
    pub selected: Var,
}

impl<T: Scalar> Graph<'_, T> {
    /// Gate `f_enc` with `sigmoid(conv1x1([mean_c(f_enc), max_c(f_enc)]))`.
    pub fn dfp_select(&mut self, layer: usize, f_enc: Var) -> Result<DfpSelection> {
        let mean = self.tape.channel_mean(f_enc)?;
        let max = self.tape.channel_max(f_enc)?;
        let descriptor = self.tape.concat(&[mean, max])?;
        let logits = self.conv(&format!("dfp{layer}.attention"), descriptor, 1, 0, true)?;
        let attention = self.tape.sigmoid(logits);
        let selected = self.tape.mul_spatial(f_enc, attention)?;
        Ok(DfpSelection { attention, selected })
    }

    /// Concatenate `[selected, f_dec]` and project back to `f_dec`'s width.
    pub fn dfp_fuse(&mut self, layer: usize, selected: Var, f_dec: Var) -> Result<Var> {
        let (a, b) = (self.dims(selected)?, self.dims(f_dec)?);
        if a[..3] != b[..3] {
            return Err(Error::shape(
                "dfp_fuse",
                format!("layer {layer}: selected {a:?} vs decoder {b:?}"),
            ));
        }
        let concat = self.tape.concat(&[selected, f_dec])?;
        self.conv(&format!("dfp{layer}.project"), concat, 1, 0, true)
    }
}
