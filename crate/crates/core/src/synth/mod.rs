//! Synthetic benchmark: procedural objects, occluders and a toy backbone.

pub mod backbone;
pub mod dataset;
pub mod scene;

use rand::Rng;

use crate::error::Result;
use crate::instances::rng;

pub use backbone::{toy_backbone, ToyBackbone, DEPTH, STRIDE};
pub use dataset::{make_clutter, make_dataset, DatasetSpec};
pub use scene::{
    apply_occlusion, class_name, clutter_image, downsample_mask, synth_scene, template_size, Level, OccluderType,
    SyntheticScene, NUM_CLASSES, NUM_POSES,
};

/// Canvas side for classification scenes.
pub const CLS_CANVAS: usize = 64;
/// Canvas side for detection scenes.
pub const DET_CANVAS: usize = 96;

pub(crate) fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, &p| (h ^ p).wrapping_mul(0x1000_0000_01b3).rotate_left(17))
}

/// An object centered on the canvas at a stride-aligned offset.
pub fn classification_scene(class: usize, pose: usize, seed: u64) -> Result<SyntheticScene> {
    let (th, tw) = template_size(pose);
    let x = (CLS_CANVAS - tw) / 2 / STRIDE * STRIDE;
    let y = (CLS_CANVAS - th) / 2 / STRIDE * STRIDE;
    synth_scene(class, pose, (x, y), (CLS_CANVAS, CLS_CANVAS), seed)
}

/// An object at a random stride-aligned position of the detection canvas.
pub fn detection_scene(class: usize, pose: usize, seed: u64) -> Result<SyntheticScene> {
    let mut r = rng(seed);
    let (th, tw) = template_size(pose);
    let x = r.random_range(0..=(DET_CANVAS - tw) / STRIDE) * STRIDE;
    let y = r.random_range(0..=(DET_CANVAS - th) / STRIDE) * STRIDE;
    synth_scene(class, pose, (x, y), (DET_CANVAS, DET_CANVAS), r.random())
}

/// Unoccluded training scenes, balanced over classes and poses.
pub fn training_scenes(per_class: usize, detection: bool, seed: u64) -> Result<Vec<SyntheticScene>> {
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        for i in 0..per_class {
            let s = mix_seed(seed, &[0, class as u64, i as u64]);
            let pose = i % NUM_POSES;
            out.push(if detection { detection_scene(class, pose, s)? } else { classification_scene(class, pose, s)? });
        }
    }
    Ok(out)
}

/// Test scenes for every occlusion level and occluder type: `per_class`
/// objects per class at `L0`, and the same count per type at each other level.
pub fn test_scenes(per_class: usize, detection: bool, seed: u64) -> Result<Vec<SyntheticScene>> {
    test_scenes_by_level(per_class, per_class, detection, seed)
}

/// `per_class` objects per class at every level, split evenly over the
/// occluder types of the occluded levels (rounded up).
pub fn balanced_test_scenes(per_class: usize, detection: bool, seed: u64) -> Result<Vec<SyntheticScene>> {
    let types = OccluderType::OCCLUDING.len();
    test_scenes_by_level(per_class, per_class.div_ceil(types), detection, seed)
}

fn test_scenes_by_level(clean: usize, per_type: usize, detection: bool, seed: u64) -> Result<Vec<SyntheticScene>> {
    let mut out = Vec::new();
    for level in Level::ALL {
        let per_class = if level == Level::L0 { clean } else { per_type };
        let kinds: &[OccluderType] = if level == Level::L0 { &[OccluderType::None] } else { &OccluderType::OCCLUDING };
        for (ki, &kind) in kinds.iter().enumerate() {
            for class in 0..NUM_CLASSES {
                for i in 0..per_class {
                    let s = mix_seed(seed, &[1, level as u64, ki as u64, class as u64, i as u64]);
                    let pose = i % NUM_POSES;
                    let base = if detection {
                        detection_scene(class, pose, s)?
                    } else {
                        classification_scene(class, pose, s)?
                    };
                    out.push(apply_occlusion(&base, level, kind, s.wrapping_add(1))?);
                }
            }
        }
    }
    Ok(out)
}

/// Object-free clutter images for occluder learning.
pub fn clutter_images(n: usize, side: usize, seed: u64) -> Result<Vec<crate::image::GrayImage>> {
    (0..n).map(|i| clutter_image(side, side, mix_seed(seed, &[2, i as u64]))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_cover_every_cell() {
        let test = test_scenes(1, false, 4).unwrap();
        assert_eq!(test.len(), NUM_CLASSES * (1 + 3 * 4));
        let balanced = balanced_test_scenes(8, false, 4).unwrap();
        for level in Level::ALL {
            assert_eq!(balanced.iter().filter(|s| s.level == level).count(), NUM_CLASSES * 8);
        }
        for s in &test {
            let (lo, hi) = s.level.band();
            assert!((lo..=hi).contains(&s.occluded_fraction()));
        }
        let det = training_scenes(2, true, 4).unwrap();
        for s in &det {
            assert_eq!(s.image.width, DET_CANVAS);
            assert_eq!(s.bbox.x0 as usize % STRIDE, 0);
        }
    }
}
