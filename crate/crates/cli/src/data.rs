//! Loading on-disk datasets, models and configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use compnet::eval::EvalScene;
use compnet::geometry::BBox;
use compnet::io::config::{ConfigMap, DETECT_KEYS, INIT_KEYS, TRAIN_KEYS};
use compnet::io::{read_feature_file, read_manifest, read_model, read_pnm, ManifestRow};
use compnet::model::CompositionalNet;
use compnet::synth::{downsample_mask, STRIDE};
use compnet::tensor::FeatureMap;
use rayon::prelude::*;

use crate::Global;

/// Window sizes of detection parts, in feature cells.
pub const WINDOW_KEYS: [&str; 2] = ["center_window", "corner_window"];

pub fn config(g: &Global) -> anyhow::Result<ConfigMap> {
    let Some(path) = &g.config else { return Ok(ConfigMap::default()) };
    let map = ConfigMap::read(path)?;
    let known: Vec<&str> =
        INIT_KEYS.iter().chain(&TRAIN_KEYS).chain(&DETECT_KEYS).chain(&WINDOW_KEYS).copied().collect();
    map.check_keys(&known)?;
    Ok(map)
}

pub fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    path.as_deref().ok_or_else(|| compnet::Error::Config(format!("--{flag} is required")).into())
}

/// The model named by `--model`, with `--prior` applied.
pub fn model(g: &Global) -> anyhow::Result<(CompositionalNet, Vec<(String, String)>)> {
    let path = required(&g.model, "model")?;
    let mut file = read_model(path)?;
    if let Some(p) = g.prior {
        file.net.occluders = file.net.occluders.with_prior(p)?;
    }
    Ok((file.net, file.config))
}

/// One manifest row with its features and feature-grid masks.
pub struct Scene {
    pub row: ManifestRow,
    pub map: FeatureMap,
    pub occluder: Vec<bool>,
    pub object: Vec<bool>,
}

impl Scene {
    pub fn grid_bbox(&self) -> BBox {
        self.row.bbox.scale(1.0 / STRIDE as f64)
    }

    pub fn eval(&self) -> EvalScene<'_> {
        EvalScene {
            map: &self.map,
            label: self.row.class,
            level: self.row.level,
            kind: self.row.kind,
            bbox: self.row.bbox,
            masks: Some((&self.occluder, &self.object)),
        }
    }
}

fn grid_mask(path: &Path) -> anyhow::Result<Vec<bool>> {
    let img = read_pnm(path)?;
    Ok(downsample_mask(&img.to_mask(), img.width, img.height))
}

pub fn load_dataset(dir: &Path, with_masks: bool) -> anyhow::Result<Vec<Scene>> {
    let rows = read_manifest(&dir.join("manifest.tsv"))?;
    rows.into_par_iter()
        .map(|row| {
            let map = read_feature_file(&dir.join(&row.features))?;
            let (occluder, object) = if with_masks {
                (grid_mask(&dir.join(&row.occluder_mask))?, grid_mask(&dir.join(&row.object_mask))?)
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(Scene { row, map, occluder, object })
        })
        .collect()
}

/// Feature maps listed in a clutter directory's `clutter.txt`.
pub fn load_clutter(dir: &Path) -> anyhow::Result<Vec<FeatureMap>> {
    let list = dir.join("clutter.txt");
    let text = std::fs::read_to_string(&list).with_context(|| format!("reading {}", list.display()))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(read_feature_file(&dir.join(l.trim()))?)).collect()
}

pub fn class_count(scenes: &[Scene]) -> anyhow::Result<usize> {
    scenes.iter().map(|s| s.row.class + 1).max().ok_or_else(|| compnet::Error::Data("empty dataset".into()).into())
}
