use std::collections::BTreeSet;

use fsfnet::data::{
    downsample_labels, load_dataset, random_crop, scene_layout, synth_dataset, synth_scene, write_dataset, SceneConfig,
    CAMERA_HEIGHT,
};
use fsfnet::hha::CameraIntrinsics;
use fsfnet::raster::{LabelMap, IGNORE_LABEL};
use fsfnet::Error;
use image::{ImageBuffer, Luma, Rgb};
use proptest::prelude::*;

fn quiet() -> SceneConfig {
    SceneConfig {
        rgb_noise_sigma: 0.0,
        seed: 21,
        ..SceneConfig::default()
    }
}

#[test]
fn same_seed_and_index_give_identical_scenes() {
    let cfg = SceneConfig {
        seed: 5,
        ..SceneConfig::default()
    };
    assert_eq!(synth_scene(&cfg, 3).unwrap(), synth_scene(&cfg, 3).unwrap());
    assert_ne!(synth_scene(&cfg, 3).unwrap().rgb, synth_scene(&cfg, 4).unwrap().rgb);
}

#[test]
fn labels_follow_nearest_covering_shape() {
    let cfg = quiet();
    let k = CameraIntrinsics::synthetic(cfg.image_size, cfg.image_size);
    for index in 0..10 {
        let s = synth_scene(&cfg, index).unwrap();
        let shapes = scene_layout(&cfg, index);
        for y in 0..cfg.image_size {
            let below = y as f64 - k.cy;
            let far = cfg.depth_range[1];
            let bg = if below > 0.0 {
                ((CAMERA_HEIGHT * k.fy / below) as f32).min(far)
            } else {
                far
            };
            for x in 0..cfg.image_size {
                let nearest = shapes
                    .iter()
                    .filter(|sh| sh.covers(x, y) && sh.depth < bg)
                    .min_by(|a, b| a.depth.total_cmp(&b.depth));
                let (label, depth) = nearest.map_or((0, bg), |sh| (sh.class, sh.depth));
                assert_eq!(s.labels.get(x, y), label, "scene {index} at ({x},{y})");
                assert_eq!(s.depth.get(x, y).unwrap() as f32, depth);
            }
        }
    }
}

#[test]
fn occluders_lie_strictly_in_front_of_occluded_bands() {
    let cfg = quiet();
    for index in 0..20 {
        let s = synth_scene(&cfg, index).unwrap();
        let shapes = scene_layout(&cfg, index);
        for y in 0..cfg.image_size {
            for x in 0..cfg.image_size {
                let label = s.labels.get(x, y);
                if label == 0 {
                    continue;
                }
                let z = s.depth.get(x, y).unwrap() as f32;
                for hidden in shapes.iter().filter(|sh| sh.covers(x, y) && sh.class != label) {
                    assert!(z < cfg.depth_band(hidden.class).0, "scene {index} at ({x},{y})");
                }
            }
        }
    }
}

#[test]
fn noiseless_shapes_have_one_color() {
    let cfg = quiet();
    let s = synth_scene(&cfg, 2).unwrap();
    for class in 1..cfg.num_classes as u8 {
        let colors: BTreeSet<Vec<u32>> = (0..cfg.image_size * cfg.image_size)
            .filter(|&i| s.labels.data[i] == class)
            .map(|i| s.rgb.data[i * 3..i * 3 + 3].iter().map(|v| v.to_bits()).collect())
            .collect();
        assert!(colors.len() <= 1, "class {class} has {} colors", colors.len());
    }
}

#[test]
fn label_values_stay_in_range() {
    let cfg = SceneConfig {
        num_classes: 9,
        seed: 3,
        ..SceneConfig::default()
    };
    for s in synth_dataset(&cfg, 12).unwrap() {
        assert!(s.labels.data.iter().all(|&l| (l as usize) < 9 || l == IGNORE_LABEL));
        s.validate(9).unwrap();
    }
}

#[test]
fn empty_root_loads_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn written_dataset_loads_back_in_stem_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        image_size: 32,
        ..quiet()
    };
    let mut samples = synth_dataset(&cfg, 3).unwrap();
    samples.reverse();
    write_dataset(dir.path(), &samples, None).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let stems: Vec<&str> = loaded.iter().map(|s| s.stem.as_str()).collect();
    assert_eq!(stems, ["00000", "00001", "00002"]);
    let original = &samples[2];
    assert_eq!(loaded[0].labels, original.labels);
    assert_eq!(loaded[0].rgb.to_u8(), original.rgb.to_u8());
    assert_eq!(loaded[0].hha.to_u8(), original.hha.to_u8());
    for (a, b) in loaded[0].depth.values.iter().zip(&original.depth.values) {
        assert!((a - b).abs() <= 5e-4);
    }
}

fn write_png_set(root: &std::path::Path, stem: &str, depth_mm: u16, with_label: bool) {
    for d in ["rgb", "depth", "label"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    let rgb: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(4, 4, vec![100u8; 48]).unwrap();
    rgb.save(root.join("rgb").join(format!("{stem}.png"))).unwrap();
    let depth: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(4, 4, vec![depth_mm; 16]).unwrap();
    depth.save(root.join("depth").join(format!("{stem}.png"))).unwrap();
    if with_label {
        let label: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(4, 4, vec![1u8; 16]).unwrap();
        label.save(root.join("label").join(format!("{stem}.png"))).unwrap();
    }
}

#[test]
fn depth_png_millimeters_become_meters() {
    let dir = tempfile::tempdir().unwrap();
    write_png_set(dir.path(), "a", 1500, true);
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].depth.get(2, 2), Some(1.5f32 as f64));
    assert_eq!(loaded[0].hha.channels, 3);
}

#[test]
fn unmatched_stem_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_png_set(dir.path(), "a", 1000, true);
    write_png_set(dir.path(), "b", 1000, false);
    match load_dataset(dir.path()) {
        Err(Error::Dataset { stem, .. }) => assert_eq!(stem, "b"),
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn crop_moves_every_channel_together() {
    let cfg = quiet();
    let s = synth_scene(&cfg, 1).unwrap();
    assert_eq!(random_crop(&s, cfg.image_size, 4).unwrap(), s);
    let a = random_crop(&s, 40, 17).unwrap();
    assert_eq!(a, random_crop(&s, 40, 17).unwrap());
    let (x0, y0) = fsfnet::data::crop_offset(64, 64, 40, 17).unwrap();
    for y in 0..40 {
        for x in 0..40 {
            assert_eq!(a.labels.get(x, y), s.labels.get(x + x0, y + y0));
            assert_eq!(a.rgb.pixel(x, y), s.rgb.pixel(x + x0, y + y0));
            assert_eq!(a.hha.pixel(x, y), s.hha.pixel(x + x0, y + y0));
            assert_eq!(a.depth.get(x, y), s.depth.get(x + x0, y + y0));
        }
    }
    assert!(random_crop(&s, 65, 0).is_err());
}

proptest! {
    #[test]
    fn downsampling_never_invents_labels(
        data in proptest::collection::vec(prop_oneof![0u8..6, Just(IGNORE_LABEL)], 64),
        factor in prop_oneof![Just(1usize), Just(2), Just(4), Just(8)],
    ) {
        let labels = LabelMap::new(8, 8, data).unwrap();
        let down = downsample_labels(&labels, factor).unwrap();
        let input: BTreeSet<u8> = labels.data.iter().copied().collect();
        prop_assert!(down.data.iter().all(|l| input.contains(l)));
        prop_assert_eq!(down.width, 8 / factor);
    }
}
