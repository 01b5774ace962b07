//! Model initialization from data: vMF kernels by k-means++, viewpoint
//! mixtures by spectral clustering of binarized activations, occluders from
//! object-free clutter and, for detection, context-aware corner parts.

use rand::seq::SliceRandom;

use crate::clustering::{binarize_activations, kmeans_pp, spectral_cluster, KMeansOptions};
use crate::context::{build_context_dictionary, segment_context, ContextDictionary};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::instances::rng;
use crate::mixture::{init_mixture_coefficients, ActivationCrop};
use crate::model::{ClassModel, CompositionalNet, Corner, PartModel};
use crate::occlusion::{learn_occluder_bank, OccluderBank};
use crate::tensor::{FeatureMap, Position, Window, WindowShape};
use crate::vmf::VmfKernelBank;

#[derive(Debug, Clone, PartialEq)]
pub struct InitOptions {
    pub k: usize,
    pub m: usize,
    pub sigma: f64,
    pub occluders: usize,
    pub prior: f64,
    /// Feature vectors sampled for kernel clustering.
    pub subsample: usize,
    pub binarize_threshold: f64,
    pub context_q: usize,
    pub context_threshold: f64,
    pub rf_margin: usize,
    pub seed: u64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            k: 512,
            m: crate::model::DEFAULT_MIXTURES,
            sigma: 30.0,
            occluders: crate::occlusion::DEFAULT_OCCLUDERS,
            prior: crate::occlusion::DEFAULT_PRIOR,
            subsample: 20_000,
            binarize_threshold: 0.5,
            context_q: crate::context::DEFAULT_CONTEXT_CENTERS,
            context_threshold: crate::context::DEFAULT_CONTEXT_THRESHOLD,
            rf_margin: crate::context::DEFAULT_RF_MARGIN,
            seed: 0,
        }
    }
}

/// Cluster up to `subsample` non-void feature vectors into `k` unit kernels.
pub fn init_kernels(maps: &[&FeatureMap], k: usize, sigma: f64, subsample: usize, seed: u64) -> Result<VmfKernelBank> {
    let depth = maps.first().ok_or_else(|| Error::Data("no feature maps to cluster".into()))?.depth();
    let mut rows: Vec<&[f32]> = Vec::new();
    for map in maps {
        if map.depth() != depth {
            return Err(Error::Dimension(format!("feature depth {} vs {depth}", map.depth())));
        }
        rows.extend((0..map.height() * map.width()).filter(|&i| !map.is_void_at(i)).map(|i| map.vector_at(i)));
    }
    if rows.is_empty() {
        return Err(Error::Data("every feature vector is void".into()));
    }
    let mut r = rng(seed);
    if rows.len() > subsample {
        rows.shuffle(&mut r);
        rows.truncate(subsample);
    }
    let points: Vec<f64> = rows.iter().flat_map(|v| v.iter().map(|&x| f64::from(x))).collect();
    let clusters = kmeans_pp(&points, depth, k, seed, KMeansOptions::default())?;
    if clusters.k() < k {
        tracing::warn!(requested = k, used = clusters.k(), "kernel count reduced");
    }
    VmfKernelBank::from_directions(clusters.centers, depth, sigma)
}

/// Spectral viewpoint assignment of crops via hamming affinity of their
/// binarized activations.
pub fn assign_viewpoints(crops: &[ActivationCrop], m: usize, threshold: f64, seed: u64) -> Result<Vec<usize>> {
    let bits: Vec<_> = crops.iter().map(|c| binarize_activations(&c.acts, threshold)).collect();
    Ok(spectral_cluster(&bits, m.min(crops.len()), seed)?.assignments)
}

fn object_part(crops: &[ActivationCrop], assignments: &[usize], m: usize, shape: WindowShape) -> Result<PartModel> {
    let (object, _) = init_mixture_coefficients(crops, None, assignments, m)?;
    PartModel::new(shape, object, None)
}

fn default_name(label: usize) -> String {
    if label < crate::synth::NUM_CLASSES {
        crate::synth::class_name(label).to_string()
    } else {
        format!("class{label}")
    }
}

/// Per-class viewpoint assignments produced during initialization, indexed
/// like the class's training samples.
pub type Assignments = Vec<Vec<usize>>;

/// Classification models: one full-map window per class, mixtures from the
/// spectral viewpoint clusters of that class's training maps.
pub fn init_class_models(
    bank: &VmfKernelBank,
    data: &[(&FeatureMap, usize)],
    classes: usize,
    opts: &InitOptions,
) -> Result<(Vec<ClassModel>, Assignments)> {
    let (h, w) =
        data.first().map(|(m, _)| (m.height(), m.width())).ok_or_else(|| Error::Data("no training maps".into()))?;
    let shape = WindowShape::centered(h, w);
    let mut models = Vec::with_capacity(classes);
    let mut assignments = Vec::with_capacity(classes);
    for label in 0..classes {
        let crops: Vec<ActivationCrop> = data
            .iter()
            .filter(|(_, y)| *y == label)
            .map(|(map, _)| {
                let acts = bank.activation_tensor(map)?;
                Ok(ActivationCrop::new(&acts, Window::centered_on_grid(shape, acts.height, acts.width)))
            })
            .collect::<Result<_>>()?;
        if crops.is_empty() {
            return Err(Error::Data(format!("class {label} has no training maps")));
        }
        let a = assign_viewpoints(&crops, opts.m, opts.binarize_threshold, opts.seed ^ label as u64)?;
        models.push(ClassModel {
            label,
            name: default_name(label),
            center: object_part(&crops, &a, opts.m, shape)?,
            corners: None,
        });
        assignments.push(a);
    }
    Ok((models, assignments))
}

/// Occluder bank from object-free clutter maps.
pub fn init_occluders(bank: &VmfKernelBank, clutter: &[FeatureMap], opts: &InitOptions) -> Result<OccluderBank> {
    learn_occluder_bank(clutter, opts.occluders, bank, opts.prior, opts.seed)
}

/// Full classification model: kernels, class mixtures and occluders.
pub fn init_classifier(
    data: &[(&FeatureMap, usize)],
    clutter: &[FeatureMap],
    classes: usize,
    opts: &InitOptions,
) -> Result<CompositionalNet> {
    let maps: Vec<&FeatureMap> = data.iter().map(|(m, _)| *m).collect();
    let bank = init_kernels(&maps, opts.k, opts.sigma, opts.subsample, opts.seed)?;
    let (models, _) = init_class_models(&bank, data, classes, opts)?;
    let occluders = init_occluders(&bank, clutter, opts)?;
    CompositionalNet::new(bank, models, occluders)
}

/// A detection training scene: feature map, label and box in feature cells.
#[derive(Debug, Clone, Copy)]
pub struct BoxedMap<'a> {
    pub map: &'a FeatureMap,
    pub label: usize,
    pub bbox: BBox,
}

/// Context dictionary from the features outside every training box.
pub fn init_context_dictionary(scenes: &[BoxedMap], opts: &InitOptions) -> Result<ContextDictionary> {
    let depth = scenes.first().ok_or_else(|| Error::Data("no detection scenes".into()))?.map.depth();
    let mut features = Vec::new();
    for s in scenes {
        let w = s.map.width();
        for i in 0..s.map.height() * w {
            if !s.map.is_void_at(i) && !s.bbox.contains_cell(Position::new(i / w, i % w)) {
                features.extend(s.map.vector_at(i).iter().map(|&x| f64::from(x)));
            }
        }
    }
    if features.is_empty() {
        return Err(Error::Data("no context features outside the boxes".into()));
    }
    build_context_dictionary(&features, depth, opts.context_q, opts.context_threshold, opts.seed)
}

/// Detection models with context mixtures and corner parts. Every part of a
/// class shares the viewpoint assignment of its center crops. Center object
/// mixtures average object cells, corner object mixtures all cells, and
/// context mixtures the context cells.
pub fn init_detection_models(
    bank: &VmfKernelBank,
    scenes: &[BoxedMap],
    classes: usize,
    center: WindowShape,
    corner: WindowShape,
    dict: &ContextDictionary,
    opts: &InitOptions,
) -> Result<(Vec<ClassModel>, Assignments)> {
    let mut models = Vec::with_capacity(classes);
    let mut all_assignments = Vec::with_capacity(classes);
    for label in 0..classes {
        let members: Vec<&BoxedMap> = scenes.iter().filter(|s| s.label == label).collect();
        if members.is_empty() {
            return Err(Error::Data(format!("class {label} has no detection scenes")));
        }
        let mut acts = Vec::with_capacity(members.len());
        let mut object_grids = Vec::with_capacity(members.len());
        for s in &members {
            acts.push(bank.activation_tensor(s.map)?);
            object_grids.push(segment_context(s.map, &s.bbox, dict, opts.rf_margin)?.object);
        }
        let crops_for = |part: Corner, shape: WindowShape| -> (Vec<ActivationCrop>, Vec<Vec<bool>>, Vec<Vec<bool>>) {
            let mut crops = Vec::new();
            let mut obj = Vec::new();
            let mut ctx = Vec::new();
            for ((s, a), grid) in members.iter().zip(&acts).zip(&object_grids) {
                let window = Window::new(shape, part.anchor(&s.bbox), a.height, a.width);
                let mut o = vec![false; shape.cells()];
                let mut c = vec![false; shape.cells()];
                for (u, g) in window.valid_cells() {
                    o[u] = grid[g];
                    c[u] = !grid[g];
                }
                crops.push(ActivationCrop::new(a, window));
                obj.push(o);
                ctx.push(c);
            }
            (crops, obj, ctx)
        };
        let (center_crops, _, _) = crops_for(Corner::Center, center);
        let assignments = assign_viewpoints(&center_crops, opts.m, opts.binarize_threshold, opts.seed ^ label as u64)?;
        let m = opts.m.min(members.len());
        let build = |part: Corner, shape: WindowShape| -> Result<PartModel> {
            let (crops, obj, ctx) = crops_for(part, shape);
            // corner windows straddle the box edge, so every cell informs their object mixtures
            let w = (part == Corner::Center).then_some(obj.as_slice());
            let (object, _) = init_mixture_coefficients(&crops, w, &assignments, m)?;
            let (context, _) = init_mixture_coefficients(&crops, Some(&ctx), &assignments, m)?;
            PartModel::new(shape, object, Some(context))
        };
        models.push(ClassModel {
            label,
            name: default_name(label),
            center: build(Corner::Center, center)?,
            corners: Some((build(Corner::TopLeft, corner)?, build(Corner::BottomRight, corner)?)),
        });
        all_assignments.push(assignments);
    }
    Ok((models, all_assignments))
}

/// Full detection model plus the context dictionary used to label training
/// cells.
pub fn init_detector(
    scenes: &[BoxedMap],
    clutter: &[FeatureMap],
    classes: usize,
    center: WindowShape,
    corner: WindowShape,
    opts: &InitOptions,
) -> Result<(CompositionalNet, ContextDictionary)> {
    let maps: Vec<&FeatureMap> = scenes.iter().map(|s| s.map).collect();
    let bank = init_kernels(&maps, opts.k, opts.sigma, opts.subsample, opts.seed)?;
    let dict = init_context_dictionary(scenes, opts)?;
    let (models, _) = init_detection_models(&bank, scenes, classes, center, corner, &dict, opts)?;
    let occluders = init_occluders(&bank, clutter, opts)?;
    Ok((CompositionalNet::new(bank, models, occluders)?, dict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{clustered_map, random_bank};

    #[test]
    fn kernels_are_unit_and_capped() {
        let bank = random_bank(3, 6, 30.0, 1);
        let maps: Vec<FeatureMap> = (0..3).map(|i| clustered_map(4, 4, &bank, 0.05, i)).collect();
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let learned = init_kernels(&refs, 3, 30.0, 20, 7).unwrap();
        assert_eq!(learned.k(), 3);
        learned.validate().unwrap();
        // every true direction is recovered by some learned kernel
        for k in 0..3 {
            let best = (0..3).map(|j| crate::tensor::dot(bank.mu(k), learned.mu(j))).fold(f64::MIN, f64::max);
            assert!(best > 0.95, "kernel {k}: {best}");
        }
    }

    #[test]
    fn classifier_init_is_valid() {
        let bank = random_bank(4, 6, 30.0, 2);
        let maps: Vec<FeatureMap> = (0..8).map(|i| clustered_map(3, 3, &bank, 0.1, i)).collect();
        let data: Vec<(&FeatureMap, usize)> = maps.iter().enumerate().map(|(i, m)| (m, i % 2)).collect();
        let opts = InitOptions { k: 4, m: 2, occluders: 2, ..InitOptions::default() };
        let net = init_classifier(&data, &maps[..2], 2, &opts).unwrap();
        net.validate().unwrap();
        assert_eq!(net.classes[1].center.m(), 2);
    }
}
