//! On-disk dataset layout:
//!
//! ```text
//! root/rgb/<stem>.png     8-bit RGB
//! root/depth/<stem>.png   16-bit gray, millimeters, 0 = missing
//! root/label/<stem>.png   8-bit gray class indices, 255 = ignore
//! root/hha/<stem>.png     optional 8-bit RGB, round(255 * v)
//! root/intrinsics.json    optional {"fx", "fy", "cx", "cy"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use super::RgbdSample;
use crate::error::{Error, Result};
use crate::hha::{encode_hha, CameraIntrinsics, DepthMap};
use crate::raster::{Image, LabelMap};

const DIRS: [&str; 4] = ["rgb", "depth", "label", "hha"];

fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: CameraIntrinsics = serde_json::from_str(&text)?;
    k.validate()?;
    Ok(k)
}

/// Reads a 16-bit millimeter depth PNG into meters; zero marks missing depth.
pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let im = image::open(path)?.into_luma16();
    let (w, h) = im.dimensions();
    let raw = im.into_raw();
    let values = raw.iter().map(|&mm| mm as f32 / 1000.0).collect();
    let valid = raw.iter().map(|&mm| mm > 0).collect();
    DepthMap::with_mask(w as usize, h as usize, values, valid)
}

fn read_rgb(path: &Path) -> Result<Image> {
    let im = image::open(path)?.into_rgb8();
    let (w, h) = im.dimensions();
    Image::new(
        w as usize,
        h as usize,
        3,
        im.into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    let im = image::open(path)?.into_luma8();
    let (w, h) = im.dimensions();
    LabelMap::new(w as usize, h as usize, im.into_raw())
}

/// Writes a 3-channel image as 8-bit RGB with samples `round(255 * v)`.
pub fn write_rgb_png(path: &Path, im: &Image) -> Result<()> {
    if im.channels != 3 {
        return Err(Error::shape("write_rgb_png", format!("{} channels", im.channels)));
    }
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(im.width as u32, im.height as u32, im.to_u8())
        .ok_or_else(|| Error::shape("write_rgb_png", "buffer size"))?;
    buf.save(path)?;
    Ok(())
}

fn write_depth_png(path: &Path, d: &DepthMap) -> Result<()> {
    let mm: Vec<u16> = d
        .values
        .iter()
        .zip(&d.valid)
        .map(|(&m, &ok)| {
            if ok {
                (m * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(d.width as u32, d.height as u32, mm)
        .ok_or_else(|| Error::shape("write_depth_png", "buffer size"))?;
    buf.save(path)?;
    Ok(())
}

fn load_one(root: &Path, stem: &str, has_hha: bool, k: Option<&CameraIntrinsics>) -> Result<RgbdSample> {
    let file = |dir: &str| -> PathBuf { root.join(dir).join(format!("{stem}.png")) };
    let rgb = read_rgb(&file("rgb"))?;
    let depth = read_depth_png(&file("depth"))?;
    let labels = read_labels(&file("label"))?;
    let hha = if has_hha {
        read_rgb(&file("hha"))?
    } else {
        let synthetic = CameraIntrinsics::synthetic(depth.width, depth.height);
        encode_hha(&depth, k.unwrap_or(&synthetic))?
    };
    let sample = RgbdSample {
        stem: stem.to_string(),
        rgb,
        depth,
        hha,
        labels,
    };
    sample.validate(255)?;
    Ok(sample)
}

/// Loads every sample under `root`, sorted by stem. Without an `hha/`
/// directory the HHA images are computed from depth.
pub fn load_dataset(root: &Path) -> Result<Vec<RgbdSample>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let listing = |dir: &str| -> Result<Option<Vec<String>>> {
        let p = root.join(dir);
        if p.is_dir() {
            Ok(Some(stems(&p)?))
        } else {
            Ok(None)
        }
    };
    let lists: Vec<Option<Vec<String>>> = DIRS.iter().map(|d| listing(d)).collect::<Result<_>>()?;
    let has_hha = lists[3].is_some();
    let required: Vec<&Vec<String>> = lists[..3].iter().flatten().collect();
    if required.is_empty() && !has_hha {
        return Ok(Vec::new());
    }

    let mut all: Vec<String> = lists.iter().flatten().flatten().cloned().collect();
    all.sort();
    all.dedup();
    for stem in &all {
        for (dir, list) in DIRS.iter().zip(&lists) {
            let needed = *dir != "hha" || has_hha;
            if needed && !list.as_ref().is_some_and(|l| l.binary_search(stem).is_ok()) {
                return Err(Error::Dataset {
                    stem: stem.clone(),
                    reason: format!("missing {dir}/{stem}.png"),
                });
            }
        }
    }

    let intrinsics_path = root.join("intrinsics.json");
    let k = if intrinsics_path.is_file() {
        Some(read_intrinsics(&intrinsics_path)?)
    } else {
        None
    };
    all.iter()
        .map(|stem| {
            load_one(root, stem, has_hha, k.as_ref()).map_err(|e| match e {
                Error::Dataset { .. } => e,
                other => Error::Dataset {
                    stem: stem.clone(),
                    reason: other.to_string(),
                },
            })
        })
        .collect()
}

/// Materializes samples in the layout read by [`load_dataset`].
pub fn write_dataset(root: &Path, samples: &[RgbdSample], intrinsics: Option<&CameraIntrinsics>) -> Result<()> {
    for dir in DIRS {
        let p = root.join(dir);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        let file = |dir: &str| root.join(dir).join(format!("{}.png", s.stem));
        write_rgb_png(&file("rgb"), &s.rgb)?;
        write_depth_png(&file("depth"), &s.depth)?;
        write_rgb_png(&file("hha"), &s.hha)?;
        let l: ImageBuffer<Luma<u8>, _> =
            ImageBuffer::from_raw(s.labels.width as u32, s.labels.height as u32, s.labels.data.clone())
                .ok_or_else(|| Error::shape("write_dataset", "label buffer size"))?;
        l.save(file("label"))?;
    }
    if let Some(k) = intrinsics {
        let p = root.join("intrinsics.json");
        fs::write(&p, serde_json::to_string_pretty(k)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
