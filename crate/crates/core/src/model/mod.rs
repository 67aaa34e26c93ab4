//! The segmentation network: two modality encoders, the fusion branch, the
//! detail-propagation path and a decoder with three supervised heads.

mod config;
mod dfp;
mod graph;
mod network;
mod params;
mod scrf;

pub use config::{ModelConfig, DFP_LAYERS, NUM_LAYERS};
pub use dfp::DfpSelection;
pub use graph::{BnStat, Graph, Mode};
pub use network::{EncoderFeatures, ForwardOutput, FsfNet, Inference, BN_MOMENTUM};
pub use params::{layout, Init, ParamSpec, ParamStore, ParamVars};
pub use scrf::{Modality, ScrfFusion, ScrfInputs};
