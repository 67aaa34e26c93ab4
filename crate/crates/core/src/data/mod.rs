//! RGB-D samples, augmentation, label downsampling and batching.

mod io;
mod synth;

pub use io::{load_dataset, read_depth_png, read_intrinsics, write_dataset, write_rgb_png};
pub use synth::{palette, scene_layout, synth_dataset, synth_scene, SceneConfig, Shape, ShapeKind, CAMERA_HEIGHT};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::hha::DepthMap;
use crate::raster::{stack_images, Image, LabelMap, IGNORE_LABEL};

/// One aligned RGB, depth, HHA and label quadruple.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    pub stem: String,
    pub rgb: Image,
    /// Meters.
    pub depth: DepthMap,
    pub hha: Image,
    pub labels: LabelMap,
}

impl RgbdSample {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    /// Checks shared extents, channel counts and the label range.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        let extents = [
            (self.hha.width, self.hha.height),
            (self.depth.width, self.depth.height),
            (self.labels.width, self.labels.height),
        ];
        if extents.iter().any(|&e| e != (w, h)) {
            return Err(self.invalid("rgb, depth, hha and labels must share extents"));
        }
        if self.rgb.channels != 3 || self.hha.channels != 3 {
            return Err(self.invalid("rgb and hha need 3 channels"));
        }
        if let Some(&l) = self
            .labels
            .data
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            return Err(Error::LabelOutOfRange { label: l, num_classes });
        }
        Ok(())
    }

    fn invalid(&self, reason: &str) -> Error {
        Error::Dataset {
            stem: self.stem.clone(),
            reason: reason.into(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> RgbdSample {
        RgbdSample {
            stem: self.stem.clone(),
            rgb: self.rgb.crop(x0, y0, width, height),
            depth: self.depth.crop(x0, y0, width, height),
            hha: self.hha.crop(x0, y0, width, height),
            labels: self.labels.crop(x0, y0, width, height),
        }
    }

    pub fn flip_horizontal(&self) -> RgbdSample {
        RgbdSample {
            stem: self.stem.clone(),
            rgb: self.rgb.flip_horizontal(),
            depth: self.depth.flip_horizontal(),
            hha: self.hha.flip_horizontal(),
            labels: self.labels.flip_horizontal(),
        }
    }
}

/// Top-left offset of a `size x size` crop drawn from `seed`.
pub fn crop_offset(width: usize, height: usize, size: usize, seed: u64) -> Result<(usize, usize)> {
    if size == 0 || size > width || size > height {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} does not fit a {width}x{height} sample"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((rng.random_range(0..=width - size), rng.random_range(0..=height - size)))
}

/// Square crop at one seed-determined offset, applied to every channel.
pub fn random_crop(s: &RgbdSample, size: usize, seed: u64) -> Result<RgbdSample> {
    let (x0, y0) = crop_offset(s.width(), s.height(), size, seed)?;
    Ok(s.crop(x0, y0, size, size))
}

/// Nearest-neighbor subsampling that keeps the top-left label of each
/// `factor x factor` block.
pub fn downsample_labels(labels: &LabelMap, factor: usize) -> Result<LabelMap> {
    if factor == 0 || !labels.width.is_multiple_of(factor) || !labels.height.is_multiple_of(factor) {
        return Err(Error::shape(
            "downsample_labels",
            format!("{}x{} is not divisible by {factor}", labels.width, labels.height),
        ));
    }
    let (w, h) = (labels.width / factor, labels.height / factor);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(labels.get(x * factor, y * factor));
        }
    }
    LabelMap::new(w, h, data)
}

/// Network-ready tensors for a list of equally sized samples.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub rgb: Tensor<T>,
    pub hha: Tensor<T>,
    pub labels: Vec<LabelMap>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(samples: &[&RgbdSample]) -> Result<Self> {
        let rgb: Vec<&Image> = samples.iter().map(|s| &s.rgb).collect();
        let hha: Vec<&Image> = samples.iter().map(|s| &s.hha).collect();
        Ok(Batch {
            rgb: stack_images(&rgb)?,
            hha: stack_images(&hha)?,
            labels: samples.iter().map(|s| s.labels.clone()).collect(),
        })
    }

    /// Labels of every image, downsampled by `factor` and concatenated in
    /// batch order.
    pub fn flat_labels(&self, factor: usize) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for l in &self.labels {
            out.extend(downsample_labels(l, factor)?.data);
        }
        Ok(out)
    }
}

fn index_hash(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splits `0..n` into (train, validation) indices; each index lands in
/// validation with probability `val_fraction` according to a seeded hash.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let cut = (val_fraction.clamp(0.0, 1.0) * (1u64 << 53) as f64) as u64;
    (0..n).partition(|&i| index_hash(seed, i) >> 11 >= cut)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(w: usize, h: usize) -> LabelMap {
        LabelMap::new(w, h, (0..w * h).map(|i| i as u8).collect()).unwrap()
    }

    #[test]
    fn downsample_picks_top_left_of_each_block() {
        let d = downsample_labels(&labels(4, 4), 2).unwrap();
        assert_eq!(d.data, vec![0, 2, 8, 10]);
        assert_eq!(downsample_labels(&labels(4, 4), 1).unwrap(), labels(4, 4));
        let c = LabelMap::filled(8, 8, 3);
        assert_eq!(downsample_labels(&c, 4).unwrap(), LabelMap::filled(2, 2, 3));
        assert!(downsample_labels(&labels(6, 4), 4).is_err());
    }

    #[test]
    fn crop_offset_is_seeded_and_bounded() {
        assert_eq!(crop_offset(10, 8, 4, 3).unwrap(), crop_offset(10, 8, 4, 3).unwrap());
        assert_eq!(crop_offset(6, 6, 6, 9).unwrap(), (0, 0));
        for seed in 0..50 {
            let (x, y) = crop_offset(10, 8, 4, seed).unwrap();
            assert!(x <= 6 && y <= 4);
        }
        assert!(crop_offset(4, 8, 5, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_near_fraction() {
        let (train, val) = split_indices(1000, 0.2, 4);
        assert_eq!(train.len() + val.len(), 1000);
        assert!((150..250).contains(&val.len()), "{}", val.len());
        assert_eq!(split_indices(1000, 0.2, 4), (train, val));
        assert!(split_indices(10, 0.0, 1).1.is_empty());
    }
}
