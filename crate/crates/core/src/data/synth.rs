//! Procedural RGB-D scenes with exact labels.
//!
//! A scene is a floor plane seen from [`CAMERA_HEIGHT`] above it, closed off by
//! a fronto-parallel wall at the far end of the depth range (both class 0),
//! plus fronto-parallel rectangles and ellipses. Each foreground class owns a
//! disjoint depth band and a base color. Classes `2k - 1` and `2k` get nearly
//! identical colors, so telling them apart needs depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RgbdSample;
use crate::error::{Error, Result};
use crate::hha::{encode_hha, CameraIntrinsics, DepthMap};
use crate::raster::{Image, LabelMap};

/// Meters between the camera center and the floor.
pub const CAMERA_HEIGHT: f64 = 0.5;

const WALL_COLOR: [f32; 3] = [0.62, 0.60, 0.55];
const FLOOR_COLOR: [f32; 3] = [0.38, 0.33, 0.28];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub image_size: usize,
    pub num_classes: usize,
    /// Inclusive range of foreground shapes per scene.
    pub shapes_per_scene: [usize; 2],
    /// Near and far depth in meters; the wall sits at the far end.
    pub depth_range: [f32; 2],
    pub rgb_noise_sigma: f32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 64,
            num_classes: 6,
            shapes_per_scene: [3, 6],
            depth_range: [1.0, 6.0],
            rgb_noise_sigma: 0.03,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [near, far] = self.depth_range;
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::Config(format!(
                "num_classes must be in 2..=255, got {}",
                self.num_classes
            )));
        }
        if !(near > 0.0 && far > near) {
            return Err(Error::Config(format!(
                "depth_range must satisfy 0 < near < far, got {near}..{far}"
            )));
        }
        if self.shapes_per_scene[0] > self.shapes_per_scene[1] {
            return Err(Error::Config("shapes_per_scene range is reversed".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config(format!("image_size {} is too small", self.image_size)));
        }
        if !(self.rgb_noise_sigma >= 0.0) {
            return Err(Error::Config("rgb_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Depth interval reserved for foreground class `class >= 1`.
    pub fn depth_band(&self, class: u8) -> (f32, f32) {
        let [near, far] = self.depth_range;
        let span = 0.75 * (far - near) / (self.num_classes - 1) as f32;
        let lo = near + span * (class as f32 - 1.0);
        (lo, lo + span)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// One foreground shape in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub class: u8,
    /// Meters; constant over the shape.
    pub depth: f32,
    pub center: [f64; 2],
    pub radius: [f64; 2],
}

impl Shape {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 - self.center[0]) / self.radius[0];
        let dy = (y as f64 - self.center[1]) / self.radius[1];
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// Base color of foreground class `class >= 1`.
pub fn palette(class: u8) -> [f32; 3] {
    const PAIRS: [[f32; 3]; 4] = [
        [0.80, 0.25, 0.20],
        [0.20, 0.45, 0.80],
        [0.30, 0.72, 0.30],
        [0.85, 0.75, 0.20],
    ];
    let k = (class as usize - 1) / 2;
    let base = if k < PAIRS.len() {
        PAIRS[k]
    } else {
        let t = (k as f32 * 0.618_034).fract() * std::f32::consts::TAU;
        [
            0.5 + 0.35 * t.cos(),
            0.5 + 0.35 * (t + 2.1).cos(),
            0.5 + 0.35 * (t + 4.2).cos(),
        ]
    };
    if class.is_multiple_of(2) {
        [base[0] - 0.04, base[1] + 0.03, base[2] + 0.02]
    } else {
        base
    }
}

fn rng_for(cfg: &SceneConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_layout(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let size = cfg.image_size as f64;
    let count = rng.random_range(cfg.shapes_per_scene[0]..=cfg.shapes_per_scene[1]);
    (0..count)
        .map(|_| {
            let class = rng.random_range(1..cfg.num_classes) as u8;
            let (lo, hi) = cfg.depth_band(class);
            let margin = 0.1 * (hi - lo);
            Shape {
                kind: if rng.random_bool(0.5) {
                    ShapeKind::Rectangle
                } else {
                    ShapeKind::Ellipse
                },
                class,
                depth: rng.random_range(lo + margin..hi - margin),
                center: [rng.random_range(0.0..size), rng.random_range(0.0..size)],
                radius: [
                    rng.random_range(0.08 * size..0.25 * size),
                    rng.random_range(0.08 * size..0.25 * size),
                ],
            }
        })
        .collect()
}

/// The shapes of scene `index`, in drawing order.
pub fn scene_layout(cfg: &SceneConfig, index: usize) -> Vec<Shape> {
    draw_layout(cfg, &mut rng_for(cfg, index))
}

/// Depth of the floor/wall background at row `y`.
fn background_depth(cfg: &SceneConfig, k: &CameraIntrinsics, y: usize) -> f32 {
    let far = cfg.depth_range[1];
    let below = y as f64 - k.cy;
    if below > 0.0 {
        ((CAMERA_HEIGHT * k.fy / below) as f32).min(far)
    } else {
        far
    }
}

/// Renders scene `index`: a deterministic function of `(cfg.seed, index)`.
pub fn synth_scene(cfg: &SceneConfig, index: usize) -> Result<RgbdSample> {
    cfg.validate()?;
    let n = cfg.image_size;
    let k = CameraIntrinsics::synthetic(n, n);
    let mut rng = rng_for(cfg, index);
    let shapes = draw_layout(cfg, &mut rng);

    let mut rgb = Image::zeros(n, n, 3);
    let mut depth = vec![0.0f32; n * n];
    let mut labels = vec![0u8; n * n];
    for y in 0..n {
        let bg = background_depth(cfg, &k, y);
        let bg_color = if bg < cfg.depth_range[1] {
            FLOOR_COLOR
        } else {
            WALL_COLOR
        };
        for x in 0..n {
            let (mut z, mut label, mut color) = (bg, 0u8, bg_color);
            for s in &shapes {
                if s.depth < z && s.covers(x, y) {
                    z = s.depth;
                    label = s.class;
                    color = palette(s.class);
                }
            }
            depth[y * n + x] = z;
            labels[y * n + x] = label;
            rgb.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
    if cfg.rgb_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.rgb_noise_sigma).expect("non-negative sigma");
        for v in &mut rgb.data {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let depth = DepthMap::new(n, n, depth)?;
    let hha = encode_hha(&depth, &k)?;
    Ok(RgbdSample {
        stem: format!("{index:05}"),
        rgb,
        depth,
        hha,
        labels: LabelMap::new(n, n, labels)?,
    })
}

/// Scenes `0..count`.
pub fn synth_dataset(cfg: &SceneConfig, count: usize) -> Result<Vec<RgbdSample>> {
    (0..count).map(|i| synth_scene(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_are_disjoint_and_inside_range() {
        let cfg = SceneConfig::default();
        for c in 1..cfg.num_classes as u8 {
            let (lo, hi) = cfg.depth_band(c);
            assert!(lo >= cfg.depth_range[0] && hi < cfg.depth_range[1]);
            if c > 1 {
                assert!((cfg.depth_band(c - 1).1 - lo).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn confusable_pairs_are_close_but_distinct() {
        for c in [1u8, 3] {
            let (a, b) = (palette(c), palette(c + 1));
            let d: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(d > 0.0 && d < 0.15);
        }
        let far: f32 = palette(1).iter().zip(&palette(3)).map(|(x, y)| (x - y).abs()).sum();
        assert!(far > 0.5);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SceneConfig {
                num_classes: 1,
                ..SceneConfig::default()
            },
            SceneConfig {
                depth_range: [3.0, 2.0],
                ..SceneConfig::default()
            },
            SceneConfig {
                shapes_per_scene: [4, 2],
                ..SceneConfig::default()
            },
        ];
        for cfg in bad {
            assert!(synth_scene(&cfg, 0).is_err());
        }
    }
}
