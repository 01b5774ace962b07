//! On-disk synthetic datasets: images, masks, CFMP features and a manifest.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::cfmp::write_feature_file;
use crate::io::manifest::{write_manifest, ManifestRow};
use crate::io::netpbm::write_pgm;
use crate::synth::{
    apply_occlusion, classification_scene, detection_scene, downsample_mask, mix_seed, Level, OccluderType,
    ToyBackbone, NUM_CLASSES, NUM_POSES, STRIDE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub classes: Vec<usize>,
    pub poses: Vec<usize>,
    /// Scene count per occlusion cell; classes and poses are cycled.
    pub counts: Vec<(Level, OccluderType, usize)>,
    /// Detection canvas with free placement instead of centered objects.
    pub detection: bool,
    pub backbone_seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.poses.is_empty() {
            return Err(Error::Config("dataset needs at least one class and one pose".into()));
        }
        if let Some(c) = self.classes.iter().find(|&&c| c >= NUM_CLASSES) {
            return Err(Error::Config(format!("class {c} has no template")));
        }
        if let Some(p) = self.poses.iter().find(|&&p| p >= NUM_POSES) {
            return Err(Error::Config(format!("pose {p} has no template")));
        }
        for &(level, kind, _) in &self.counts {
            if (level == Level::L0) != (kind == OccluderType::None) {
                return Err(Error::Config(format!("level {} cannot use occluder type {}", level.tag(), kind.tag())));
            }
        }
        Ok(())
    }
}

/// Generate every scene of `spec` under `out_dir` and write `manifest.tsv`.
/// Output is byte-identical for equal inputs.
pub fn make_dataset(spec: &DatasetSpec, seed: u64, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    for sub in ["images", "features", "masks"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut jobs = Vec::new();
    for (cell, &(level, kind, count)) in spec.counts.iter().enumerate() {
        for i in 0..count {
            let class = spec.classes[i % spec.classes.len()];
            let pose = spec.poses[(i / spec.classes.len()) % spec.poses.len()];
            jobs.push((jobs.len(), cell, i, level, kind, class, pose));
        }
    }
    let backbone = ToyBackbone::new(spec.backbone_seed);
    let rows = jobs
        .par_iter()
        .map(|&(idx, cell, i, level, kind, class, pose)| {
            let s = mix_seed(seed, &[3, cell as u64, i as u64]);
            let base =
                if spec.detection { detection_scene(class, pose, s)? } else { classification_scene(class, pose, s)? };
            let scene = apply_occlusion(&base, level, kind, s.wrapping_add(1))?;
            let (w, h) = (scene.image.width, scene.image.height);
            let stem = format!("{idx:05}");
            let row = ManifestRow {
                image: format!("images/{stem}.pgm"),
                features: format!("features/{stem}.cfmp"),
                object_mask: format!("masks/{stem}_obj.pgm"),
                occluder_mask: format!("masks/{stem}_occ.pgm"),
                class,
                pose,
                level,
                kind,
                bbox: scene.bbox,
            };
            write_pgm(&out_dir.join(&row.image), &scene.image)?;
            write_pgm(&out_dir.join(&row.object_mask), &GrayImage::from_mask(w, h, &scene.object_mask))?;
            write_pgm(&out_dir.join(&row.occluder_mask), &GrayImage::from_mask(w, h, &scene.occluder_mask))?;
            let (gw, gh) = (w / STRIDE, h / STRIDE);
            for (name, mask) in [("obj", &scene.object_mask), ("occ", &scene.occluder_mask)] {
                let grid = GrayImage::from_mask(gw, gh, &downsample_mask(mask, w, h));
                write_pgm(&out_dir.join(format!("masks/{stem}_{name}_grid.pgm")), &grid)?;
            }
            write_feature_file(&out_dir.join(&row.features), &backbone.features(&scene.image)?)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.tsv"), &rows)?;
    Ok(rows)
}

/// Object-free clutter scenes under `out_dir` with a `clutter.txt` listing
/// their feature files, one relative path per line.
pub fn make_clutter(n: usize, side: usize, backbone_seed: u64, seed: u64, out_dir: &Path) -> Result<Vec<String>> {
    for sub in ["images", "features"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let backbone = ToyBackbone::new(backbone_seed);
    let images = crate::synth::clutter_images(n, side, seed)?;
    let paths = images
        .par_iter()
        .enumerate()
        .map(|(i, image)| {
            let features = format!("features/clutter{i:05}.cfmp");
            write_pgm(&out_dir.join(format!("images/clutter{i:05}.pgm")), image)?;
            write_feature_file(&out_dir.join(&features), &backbone.features(image)?)?;
            Ok(features)
        })
        .collect::<Result<Vec<_>>>()?;
    let list = out_dir.join("clutter.txt");
    std::fs::write(&list, paths.iter().map(|p| format!("{p}\n")).collect::<String>())
        .map_err(|e| Error::io(&list, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::manifest::read_manifest;

    fn spec(n: usize) -> DatasetSpec {
        DatasetSpec {
            classes: vec![0, 3],
            poses: vec![0, 1],
            counts: vec![(Level::L0, OccluderType::None, n), (Level::L2, OccluderType::Noise, 1)],
            detection: false,
            backbone_seed: 1,
        }
    }

    #[test]
    fn rows_match_counts_and_rerun_is_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let rows = make_dataset(&spec(3), 5, a.path()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(read_manifest(&a.path().join("manifest.tsv")).unwrap(), rows);
        make_dataset(&spec(3), 5, b.path()).unwrap();
        for row in &rows {
            for f in [&row.image, &row.features, &row.object_mask, &row.occluder_mask] {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
    }

    #[test]
    fn empty_and_invalid_requests() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(0);
        s.counts.truncate(1);
        assert!(make_dataset(&s, 1, dir.path()).unwrap().is_empty());
        s.counts = vec![(Level::L1, OccluderType::None, 1)];
        assert!(make_dataset(&s, 1, dir.path()).is_err());
    }

    #[test]
    fn clutter_listing_points_at_features() {
        let dir = tempfile::tempdir().unwrap();
        let paths = make_clutter(2, 32, 1, 3, dir.path()).unwrap();
        let list = std::fs::read_to_string(dir.path().join("clutter.txt")).unwrap();
        assert_eq!(list.lines().collect::<Vec<_>>(), paths);
        let map = crate::io::cfmp::read_feature_file(&dir.path().join(&paths[1])).unwrap();
        assert_eq!(map.height(), 32 / STRIDE);
    }
}
