//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as flat RGBA bytes, ready for `ImageData`.

use fsfnet::backend::Tensor;
use fsfnet::checkpoint;
use fsfnet::data::{palette, synth_scene, RgbdSample, SceneConfig};
use fsfnet::hha::{encode_hha, CameraIntrinsics, DepthMap};
use fsfnet::model::{FsfNet, Mode, ModelConfig};
use fsfnet::raster::{argmax_labels, stack_images, LabelMap, IGNORE_LABEL};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn gray_rgba(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values
        .flat_map(|v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn label_color(l: u8) -> [u8; 4] {
    match l {
        IGNORE_LABEL => [0, 0, 0, 255],
        0 => [150, 150, 150, 255],
        c => {
            let p = palette(c);
            [(p[0] * 255.0) as u8, (p[1] * 255.0) as u8, (p[2] * 255.0) as u8, 255]
        }
    }
}

fn labels_rgba(map: &LabelMap) -> Vec<u8> {
    map.data.iter().flat_map(|&l| label_color(l)).collect()
}

#[wasm_bindgen]
pub struct Demo {
    sample: RgbdSample,
    /// Depth after any holes the user punched; HHA is recomputed from it.
    depth: DepthMap,
    net: FsfNet<f32>,
    prediction: Option<LabelMap>,
    attention: Vec<(String, Tensor<f32>)>,
}

#[wasm_bindgen]
impl Demo {
    /// Renders synthetic scene `index` and builds an untrained network sized for it.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, index: usize, size: usize, classes: usize) -> Result<Demo, JsError> {
        let cfg = SceneConfig {
            image_size: size,
            num_classes: classes,
            seed,
            ..SceneConfig::default()
        };
        let sample = synth_scene(&cfg, index).map_err(js)?;
        let model = ModelConfig {
            channel_widths: vec![8, 16, 32, 64],
            num_classes: classes,
            input_size: size,
            ..ModelConfig::default()
        };
        let net = FsfNet::new(model, seed).map_err(js)?;
        Ok(Demo {
            depth: sample.depth.clone(),
            sample,
            net,
            prediction: None,
            attention: Vec::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.sample.width()
    }

    pub fn rgb(&self) -> Vec<u8> {
        self.sample
            .rgb
            .to_u8()
            .chunks(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        labels_rgba(&self.sample.labels)
    }

    /// Near is bright; missing depth is red.
    pub fn depth(&self) -> Vec<u8> {
        let (lo, hi) = self
            .depth
            .values
            .iter()
            .zip(&self.depth.valid)
            .filter(|(_, &ok)| ok)
            .fold((f32::INFINITY, 0.0f32), |(lo, hi), (&d, _)| (lo.min(d), hi.max(d)));
        let span = (hi - lo).max(1e-6);
        self.depth
            .values
            .iter()
            .zip(&self.depth.valid)
            .flat_map(|(&d, &ok)| {
                if ok {
                    let g = ((1.0 - (d - lo) / span) * 255.0).round() as u8;
                    [g, g, g, 255]
                } else {
                    [200, 30, 30, 255]
                }
            })
            .collect()
    }

    /// `channel` 0..3 shows one HHA channel in gray; any other value shows all three as RGB.
    pub fn hha(&self, channel: i32) -> Vec<u8> {
        let hha = &self.sample.hha;
        match channel {
            0..=2 => gray_rgba(hha.data.chunks(3).map(|p| p[channel as usize])),
            _ => hha.to_u8().chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        }
    }

    /// Marks depth inside a disc as missing and re-encodes HHA.
    pub fn punch_hole(&mut self, cx: f64, cy: f64, radius: f64) -> Result<(), JsError> {
        let w = self.depth.width;
        for (i, ok) in self.depth.valid.iter_mut().enumerate() {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            if (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius {
                *ok = false;
            }
        }
        self.sample.hha = encode_hha(&self.depth, &CameraIntrinsics::synthetic(w, self.depth.height)).map_err(js)?;
        Ok(())
    }

    pub fn reset_depth(&mut self) -> Result<(), JsError> {
        self.depth = self.sample.depth.clone();
        self.punch_hole(-1e9, -1e9, 0.0)
    }

    /// Replaces the network with one read from checkpoint bytes; returns a summary line.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<String, JsError> {
        let (net, manifest) = checkpoint::from_bytes(bytes).map_err(js)?;
        if net.config.num_classes != self.net.config.num_classes {
            return Err(JsError::new(&format!(
                "checkpoint has {} classes, scene has {}",
                net.config.num_classes, self.net.config.num_classes
            )));
        }
        self.net = net;
        self.prediction = None;
        self.attention.clear();
        Ok(format!(
            "step {} seed {} widths {:?} scrf {} dfp {}",
            manifest.step,
            manifest.seed,
            self.net.config.channel_widths,
            self.net.config.use_scrf,
            self.net.config.use_dfp
        ))
    }

    /// Runs the network in eval mode and returns the predicted labels.
    pub fn segment(&mut self) -> Result<Vec<u8>, JsError> {
        let rgb = stack_images::<f32>(&[&self.sample.rgb]).map_err(js)?;
        let hha = stack_images::<f32>(&[&self.sample.hha]).map_err(js)?;
        let out = self.net.infer(&rgb, &hha, Mode::Eval).map_err(js)?;
        let pred = argmax_labels(&out.main_logits).map_err(js)?.remove(0);
        self.attention = out
            .intermediates
            .into_iter()
            .filter(|(k, _)| k.starts_with("dfp_attention"))
            .collect();
        let rgba = labels_rgba(&pred);
        self.prediction = Some(pred);
        Ok(rgba)
    }

    /// Fraction of labeled pixels the last segmentation got right.
    pub fn accuracy(&self) -> f64 {
        let Some(pred) = &self.prediction else { return f64::NAN };
        let (mut hit, mut n) = (0usize, 0usize);
        for (&p, &t) in pred.data.iter().zip(&self.sample.labels.data) {
            if t != IGNORE_LABEL {
                n += 1;
                hit += usize::from(p == t);
            }
        }
        hit as f64 / n.max(1) as f64
    }

    /// Names of the attention gates recorded by the last segmentation.
    pub fn attention_names(&self) -> Vec<String> {
        self.attention.iter().map(|(k, _)| k.clone()).collect()
    }

    /// Side length of gate `i`.
    pub fn attention_size(&self, i: usize) -> usize {
        self.attention.get(i).map_or(0, |(_, t)| t.shape()[2])
    }

    pub fn attention(&self, i: usize) -> Vec<u8> {
        self.attention
            .get(i)
            .map_or_else(Vec::new, |(_, t)| gray_rgba(t.data().iter().copied()))
    }
}
