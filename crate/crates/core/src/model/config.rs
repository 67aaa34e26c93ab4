use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder depth. Detail propagation reads encoder layers 2 and 3 into
/// decoder stages `NUM_LAYERS - i`.
pub const NUM_LAYERS: usize = 4;

/// Encoder layers whose fused features feed the detail-propagation path.
pub const DFP_LAYERS: [usize; 2] = [3, 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Channel width of encoder layers 1..=4.
    pub channel_widths: Vec<usize>,
    pub num_classes: usize,
    pub use_scrf: bool,
    pub use_dfp: bool,
    /// Square training crop size; any multiple of 16 is accepted at inference.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: NUM_LAYERS,
            channel_widths: vec![16, 32, 64, 128],
            num_classes: 6,
            use_scrf: true,
            use_dfp: true,
            input_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers != NUM_LAYERS {
            return Err(Error::Config(format!(
                "num_layers must be {NUM_LAYERS}, got {}",
                self.num_layers
            )));
        }
        if self.channel_widths.len() != NUM_LAYERS || self.channel_widths.contains(&0) {
            return Err(Error::Config(format!(
                "channel_widths must hold {NUM_LAYERS} positive entries, got {:?}",
                self.channel_widths
            )));
        }
        if !(2..255).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be in 2..255, got {}",
                self.num_classes
            )));
        }
        let stride = 1 << NUM_LAYERS;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of {stride}, got {}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Width of encoder layer `j` (1-based).
    pub fn width(&self, j: usize) -> usize {
        self.channel_widths[j - 1]
    }

    /// Output width of decoder stage `s` (1-based); stage `s` runs at the
    /// resolution of encoder layer `NUM_LAYERS - s`.
    pub fn decoder_width(&self, s: usize) -> usize {
        self.width(NUM_LAYERS - s)
    }

    pub fn with_modules(&self, use_scrf: bool, use_dfp: bool) -> Self {
        ModelConfig {
            use_scrf,
            use_dfp,
            ..self.clone()
        }
    }
}
