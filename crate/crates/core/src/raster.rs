//! Plain image containers shared by the data, HHA and metric modules.

use crate::backend::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Label value excluded from loss and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Interleaved `height x width x channels` image with `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "image",
                format!(
                    "{width}x{height}x{channels} needs {} samples, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + width * self.channels]);
        }
        Image {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(x, y).copy_from_slice(self.pixel(self.width - 1 - x, y));
            }
        }
        out
    }

    /// Samples quantized to 8 bits as `round(255 * clamp(v, 0, 1))`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
            .collect()
    }
}

/// Per-pixel class indices; [`IGNORE_LABEL`] marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "label map",
                format!("{width}x{height} needs {} labels, got {}", width * height, data.len()),
            ));
        }
        Ok(LabelMap { width, height, data })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap {
            width,
            height,
            data: vec![label; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> LabelMap {
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width + x0;
            data.extend_from_slice(&self.data[row..row + width]);
        }
        LabelMap { width, height, data }
    }

    pub fn flip_horizontal(&self) -> LabelMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        LabelMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Stacks same-sized images into a `(batch, height, width, channels)` tensor.
pub fn stack_images<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        if (im.width, im.height, im.channels) != (first.width, first.height, first.channels) {
            return Err(Error::shape("stack", "images in a batch must share extents"));
        }
        data.extend(im.data.iter().map(|&v| T::from_f32(v).unwrap()));
    }
    Tensor::new(vec![images.len(), first.height, first.width, first.channels], data)
}

/// Splits a `(batch, h, w, classes)` logit tensor into per-image argmax label maps.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<LabelMap>> {
    let [n, h, w, k] = logits.dims4()?;
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut data = Vec::with_capacity(h * w);
        for row in logits.data()[b * h * w * k..(b + 1) * h * w * k].chunks_exact(k) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            data.push(best as u8);
        }
        out.push(LabelMap::new(w, h, data)?);
    }
    Ok(out)
}
