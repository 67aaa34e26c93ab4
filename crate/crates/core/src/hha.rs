//! Depth to HHA conversion: horizontal disparity, height above ground and
//! angle with gravity, each normalized to `[0, 1]`.
//!
//! Camera frame: `+x` right, `+y` up, `+z` along the optical axis. Image rows
//! grow downward, so back-projection flips the row offset. Gravity points along
//! `-y`; no gravity estimation is attempted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Gravity-up direction in the camera frame.
pub const GRAVITY_UP: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Intrinsics used by the synthetic scene renderer: focal length equal to
    /// the image width, principal point at the image center.
    pub fn synthetic(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// 3-D point seen at pixel `(u, v)` with depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, -(v - self.cy) * z / self.fy, z]
    }

    /// Ray direction through pixel `(u, v)` scaled so its `z` component is 1.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        self.back_project(u, v, 1.0)
    }
}

/// Metric depth with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Pixels with a finite, strictly positive depth are valid.
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "depth map",
                format!("{width}x{height} vs {} values", values.len()),
            ));
        }
        let valid = values.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn with_mask(width: usize, height: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != values.len() {
            return Err(Error::shape("depth map", "values and mask must cover every pixel"));
        }
        if let Some(i) = values
            .iter()
            .zip(&valid)
            .position(|(&d, &ok)| ok && !(d.is_finite() && d > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "valid depth at pixel {i} is not positive"
            )));
        }
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i] as f64)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> DepthMap {
        let mut values = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width + x0;
            values.extend_from_slice(&self.values[row..row + width]);
            valid.extend_from_slice(&self.valid[row..row + width]);
        }
        DepthMap {
            width,
            height,
            values,
            valid,
        }
    }

    pub fn flip_horizontal(&self) -> DepthMap {
        let rev = |v: &[f32]| {
            v.chunks_exact(self.width)
                .flat_map(|r| r.iter().rev().copied())
                .collect()
        };
        let rev_mask = self
            .valid
            .chunks_exact(self.width)
            .flat_map(|r| r.iter().rev().copied())
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values: rev(&self.values),
            valid: rev_mask,
        }
    }

    pub fn scaled(&self, factor: f32) -> DepthMap {
        DepthMap {
            values: self.values.iter().map(|&d| d * factor).collect(),
            ..self.clone()
        }
    }
}

/// Unit surface normals, oriented toward the camera.
#[derive(Clone, Debug)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 3]> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.normals[i])
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Min-max normalization over the masked entries; a zero range maps to 0.
/// Unmasked entries are 0.
fn normalize_masked(values: &[f64], mask: &[bool]) -> Vec<f32> {
    let (lo, hi) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    values
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            if !m || !(range > 0.0) {
                0.0
            } else {
                ((v - lo) / range) as f32
            }
        })
        .collect()
}

/// Inverse depth, min-max normalized over valid pixels; invalid pixels are 0.
pub fn depth_to_disparity(depth: &DepthMap) -> Result<Vec<f32>> {
    if !depth.valid.iter().any(|&v| v) {
        return Err(Error::NoValidDepth);
    }
    let disparity: Vec<f64> = depth.values.iter().map(|&d| 1.0 / d as f64).collect();
    Ok(normalize_masked(&disparity, &depth.valid))
}

/// Normals from central-difference tangents of the back-projected point
/// cloud. Where one neighbor is missing a one-sided difference is used; a
/// pixel with no neighbor along either axis is invalid.
pub fn estimate_normals(depth: &DepthMap, k: &CameraIntrinsics) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let point = |x: usize, y: usize| depth.get(x, y).map(|z| k.back_project(x as f64, y as f64, z));
    let mut normals = vec![[0.0; 3]; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some(p) = point(x, y) else { continue };
            let left = (x > 0).then(|| point(x - 1, y)).flatten();
            let right = (x + 1 < w).then(|| point(x + 1, y)).flatten();
            let up = (y > 0).then(|| point(x, y - 1)).flatten();
            let down = (y + 1 < h).then(|| point(x, y + 1)).flatten();
            let tangent = |prev: Option<[f64; 3]>, next: Option<[f64; 3]>| match (prev, next) {
                (Some(a), Some(b)) => Some(sub(b, a)),
                (None, Some(b)) => Some(sub(b, p)),
                (Some(a), None) => Some(sub(p, a)),
                (None, None) => None,
            };
            let (Some(tu), Some(tv)) = (tangent(left, right), tangent(up, down)) else {
                continue;
            };
            let mut n = cross(tu, tv);
            let len = dot(n, n).sqrt();
            if !(len > 0.0) || !len.is_finite() {
                continue;
            }
            n = [n[0] / len, n[1] / len, n[2] / len];
            if dot(n, p) > 0.0 {
                n = [-n[0], -n[1], -n[2]];
            }
            normals[y * w + x] = n;
            valid[y * w + x] = true;
        }
    }
    NormalMap {
        width: w,
        height: h,
        normals,
        valid,
    }
}

/// Angle between a unit normal and gravity-up, mapped from `[0°, 180°]` to `[0, 1]`.
pub fn gravity_angle(normal: [f64; 3]) -> f64 {
    dot(normal, GRAVITY_UP).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

/// Three-channel HHA image. A pixel is valid when both its depth and normal
/// are; every channel of an invalid pixel is exactly 0.
pub fn encode_hha(depth: &DepthMap, k: &CameraIntrinsics) -> Result<Image> {
    k.validate()?;
    let disparity = depth_to_disparity(depth)?;
    let normals = estimate_normals(depth, k);
    let (w, h) = (depth.width, depth.height);

    let mut heights = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(z) = depth.get(x, y) {
                heights[y * w + x] = k.back_project(x as f64, y as f64, z)[1];
            }
        }
    }
    let mask: Vec<bool> = depth.valid.iter().zip(&normals.valid).map(|(&a, &b)| a && b).collect();
    let height_channel = normalize_masked(&heights, &mask);

    let mut out = Image::zeros(w, h, 3);
    for i in 0..w * h {
        if !mask[i] {
            continue;
        }
        out.data[i * 3] = disparity[i];
        out.data[i * 3 + 1] = height_channel[i];
        out.data[i * 3 + 2] = gravity_angle(normals.normals[i]) as f32;
    }
    Ok(out)
}
