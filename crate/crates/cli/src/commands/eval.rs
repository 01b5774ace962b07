//! `eval-cls`, `eval-det`, `eval-occ` and `gradcheck`.

use std::path::PathBuf;

use clap::Args;
use compnet::baseline::{train_linear_softmax, BaselineOptions};
use compnet::eval::{
    classification_records, detection_ap_by_level, eval_classification, occlusion_roc_on_correct, ClsRecord, EvalScene,
};
use compnet::geometry::BBox;
use compnet::instances::{clustered_map, random_net};
use compnet::synth::{Level, OccluderType};
use compnet::tensor::FeatureMap;
use compnet::training::{
    finite_difference_check, loss_on_sphere, total_loss_cls, total_loss_det, DetSample, TrainConfig,
};

use crate::commands::infer::{classify_options, detect_options};
use crate::data::{config, load_dataset, model, Scene};
use crate::Global;

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Test dataset directory.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalClsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training dataset for a pooled-feature linear baseline reported alongside.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

pub fn eval_cls(g: &Global, a: &EvalClsArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let scenes = load_dataset(&a.data, false)?;
    let eval: Vec<EvalScene> = scenes.iter().map(Scene::eval).collect();
    let table = eval_classification(&classification_records(&net, &eval, classify_options(g))?);
    println!("compositional\n{}", table.render());
    if let Some(dir) = &a.baseline {
        let train = load_dataset(dir, false)?;
        let data: Vec<(&FeatureMap, usize)> = train.iter().map(|s| (&s.map, s.row.class)).collect();
        let base = train_linear_softmax(&data, net.classes.len(), BaselineOptions::default())?;
        let records: Vec<ClsRecord> = scenes
            .iter()
            .map(|s| ClsRecord {
                level: s.row.level,
                kind: s.row.kind,
                predicted: base.predict(&s.map),
                label: s.row.class,
            })
            .collect();
        println!("baseline\n{}", eval_classification(&records).render());
    }
    Ok(())
}

/// Without configured thresholds every image keeps its best detection.
pub fn eval_det(g: &Global, a: &DataArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let mut opts = detect_options(g)?;
    if !config(g)?.entries.contains_key("thresholds") {
        opts.thresholds = vec![f64::NEG_INFINITY];
    }
    let scenes = load_dataset(&a.data, false)?;
    let eval: Vec<EvalScene> = scenes.iter().map(Scene::eval).collect();
    for (level, ap) in detection_ap_by_level(&net, &eval, &opts)? {
        println!("{}\t{:.4}", level.tag(), ap);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalOccArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to one occlusion level (L1, L2, L3).
    #[arg(long)]
    pub level: Option<String>,
    /// Comma-separated occluder types (white, noise, texture, object).
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<String>,
}

pub fn eval_occ(g: &Global, a: &EvalOccArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let bad = |what: &str, v: &str| compnet::Error::Config(format!("unknown {what} {v:?}"));
    let level = a.level.as_deref().map(|t| Level::from_tag(t).ok_or_else(|| bad("level", t))).transpose()?;
    let kinds = a
        .types
        .iter()
        .map(|t| OccluderType::from_tag(t).ok_or_else(|| bad("occluder type", t)))
        .collect::<Result<Vec<_>, _>>()?;
    let scenes = load_dataset(&a.data, true)?;
    let eval: Vec<EvalScene> = scenes
        .iter()
        .filter(|s| s.row.level != Level::L0)
        .filter(|s| level.is_none_or(|l| s.row.level == l))
        .filter(|s| kinds.is_empty() || kinds.contains(&s.row.kind))
        .map(Scene::eval)
        .collect();
    let (roc, used) = occlusion_roc_on_correct(&net, &eval, classify_options(g).omega)?;
    println!("scenes\t{used}/{}", eval.len());
    println!("auc\t{:.4}", roc.auc);
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per loss.
    #[arg(long, default_value_t = 5)]
    pub instances: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Central differences on small random models for both training objectives.
pub fn gradcheck(g: &Global, a: &GradcheckArgs) -> anyhow::Result<()> {
    let base = g.seed.unwrap_or(0);
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for seed in base..base + a.instances {
        let net = random_net(3, 3, 3, 2, 2, false, seed);
        let maps: Vec<FeatureMap> = (0..2).map(|i| clustered_map(3, 3, &net.bank, 0.3, seed * 10 + i)).collect();
        let batch: Vec<(&FeatureMap, usize)> = maps.iter().zip([0, 1]).collect();
        let (_, grad) = total_loss_cls(&net, &batch, &cfg)?;
        let cls = finite_difference_check(
            |p| loss_on_sphere(&net, p, |n| Ok(total_loss_cls(n, &batch, &cfg)?.0.total)).unwrap_or(f64::NAN),
            &net.params(),
            &grad,
            1e-4,
        );
        let net = random_net(3, 3, 3, 2, 2, true, seed + 1000);
        let samples = (0..2)
            .map(|i| {
                let map = clustered_map(7, 7, &net.bank, 0.3, seed * 10 + i);
                DetSample::new(map, i as usize, BBox::new(1.0, 2.0, 5.0, 6.0), &net, None, 1)
            })
            .collect::<compnet::Result<Vec<_>>>()?;
        let batch: Vec<&DetSample> = samples.iter().collect();
        let (_, grad) = total_loss_det(&net, &batch, &cfg)?;
        let det = finite_difference_check(
            |p| loss_on_sphere(&net, p, |n| Ok(total_loss_det(n, &batch, &cfg)?.0.total)).unwrap_or(f64::NAN),
            &net.params(),
            &grad,
            1e-4,
        );
        println!("seed {seed}\tclassification {cls:.3e}\tdetection {det:.3e}");
        worst = worst.max(cls).max(det);
        if cls.is_nan() || det.is_nan() {
            worst = f64::NAN;
        }
    }
    println!("max relative error {worst:.3e}");
    if !(worst <= a.tolerance) {
        return Err(compnet::Error::Numeric(format!("gradient error {worst:.3e} exceeds {:.1e}", a.tolerance)).into());
    }
    Ok(())
}
