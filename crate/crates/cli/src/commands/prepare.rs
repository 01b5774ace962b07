//! `synth` and `init`.

use clap::{Args, ValueEnum};
use compnet::init::{init_classifier, init_detector, BoxedMap, InitOptions};
use compnet::io::config::{apply_init_config, init_config_pairs};
use compnet::io::write_model;
use compnet::synth::{make_clutter, make_dataset, DatasetSpec, Level, OccluderType, NUM_CLASSES, NUM_POSES};
use compnet::tensor::{FeatureMap, WindowShape};

use crate::data::{class_count, config, load_clutter, load_dataset, required};
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Unoccluded scenes.
    Train,
    /// Every occlusion level and occluder type.
    Test,
    /// Object-free clutter for occluder learning.
    Clutter,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub split: Split,
    /// Scenes per class (per occluder type off L0); clutter image count for `clutter`.
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    /// Free object placement on the larger detection canvas.
    #[arg(long)]
    pub detection: bool,
    /// Side of clutter images in pixels.
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, default_value_t = 1)]
    pub backbone_seed: u64,
}

pub fn synth(g: &Global, a: &SynthArgs) -> anyhow::Result<()> {
    let out = required(&g.out, "out")?;
    let seed = g.seed.unwrap_or(0);
    if a.split == Split::Clutter {
        let paths = make_clutter(a.per_class, a.side, a.backbone_seed, seed, out)?;
        println!("wrote {} clutter scenes to {}", paths.len(), out.display());
        return Ok(());
    }
    let n = a.per_class * NUM_CLASSES;
    let counts = match a.split {
        Split::Train => vec![(Level::L0, OccluderType::None, n)],
        _ => {
            let mut c = vec![(Level::L0, OccluderType::None, n)];
            for level in &Level::ALL[1..] {
                c.extend(OccluderType::OCCLUDING.iter().map(|&k| (*level, k, n)));
            }
            c
        }
    };
    let spec = DatasetSpec {
        classes: (0..NUM_CLASSES).collect(),
        poses: (0..NUM_POSES).collect(),
        counts,
        detection: a.detection,
        backbone_seed: a.backbone_seed,
    };
    let rows = make_dataset(&spec, seed, out)?;
    println!("wrote {} scenes to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Clutter directory written by `synth --split clutter`.
    #[arg(long)]
    pub clutter: std::path::PathBuf,
    /// Build context-aware detection models with corner parts.
    #[arg(long)]
    pub detection: bool,
}

pub fn init_options(g: &Global) -> anyhow::Result<InitOptions> {
    let cfg = config(g)?;
    let mut opts = InitOptions::default();
    apply_init_config(&mut opts, &cfg)?;
    if let Some(s) = g.seed {
        opts.seed = s;
    }
    if let Some(p) = g.prior {
        opts.prior = p;
    }
    Ok(opts)
}

pub fn init(g: &Global, a: &InitArgs) -> anyhow::Result<()> {
    let out = required(&g.out, "out")?;
    let cfg = config(g)?;
    let opts = init_options(g)?;
    let scenes = load_dataset(&a.data, false)?;
    let clutter = load_clutter(&a.clutter)?;
    let classes = class_count(&scenes)?;
    let mut echo = init_config_pairs(&opts);
    let net = if a.detection {
        let mut side = |key: &str, default: usize| -> anyhow::Result<WindowShape> {
            let n: usize = cfg.get_or(key, default)?;
            if n == 0 {
                return Err(compnet::Error::Config(format!("{key} must be positive")).into());
            }
            echo.push((key.to_string(), n.to_string()));
            Ok(WindowShape::centered(n, n))
        };
        let (center, corner) = (side("center_window", 11)?, side("corner_window", 15)?);
        let boxed: Vec<BoxedMap> =
            scenes.iter().map(|s| BoxedMap { map: &s.map, label: s.row.class, bbox: s.grid_bbox() }).collect();
        init_detector(&boxed, &clutter, classes, center, corner, &opts)?.0
    } else {
        let data: Vec<(&FeatureMap, usize)> = scenes.iter().map(|s| (&s.map, s.row.class)).collect();
        init_classifier(&data, &clutter, classes, &opts)?
    };
    write_model(out, &net, &echo)?;
    println!("initialized {classes} classes with K={} into {}", net.bank.k(), out.display());
    Ok(())
}
