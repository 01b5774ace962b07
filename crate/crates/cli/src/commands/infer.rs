//! `classify`, `detect`, `localize-occ` and `export-heatmap`.

use std::path::PathBuf;

use clap::Args;
use compnet::inference::{self, classify_activations, detection_map, occlusion_scores, ClassifyOptions, DetectOptions};
use compnet::io::config::apply_detect_config;
use compnet::io::{export_heatmap, read_feature_file};
use compnet::model::Corner;
use compnet::tensor::ScoreGrid;

use crate::data::{config, model, required};
use crate::Global;

#[derive(Debug, Args)]
pub struct FilesArgs {
    /// CFMP feature files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

pub fn classify_options(g: &Global) -> ClassifyOptions {
    let mut opts = ClassifyOptions::default();
    if let Some(w) = g.omega {
        opts.omega = w;
    }
    opts
}

pub fn detect_options(g: &Global) -> anyhow::Result<DetectOptions> {
    let mut opts = DetectOptions::default();
    apply_detect_config(&mut opts, &config(g)?)?;
    if let Some(w) = g.omega {
        opts.omega = w;
    }
    Ok(opts)
}

/// One line per file: path, predicted class name and the class probabilities.
pub fn classify(g: &Global, a: &FilesArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let opts = classify_options(g);
    for path in &a.files {
        let acts = net.bank.activation_tensor(&read_feature_file(path)?)?;
        let r = classify_activations(&acts, &net, opts)?;
        let probs: Vec<String> = r.probabilities.iter().map(|p| format!("{p:.6}")).collect();
        println!("{}\t{}\t{}", path.display(), net.classes[r.predicted].name, probs.join(","));
    }
    Ok(())
}

/// One line per detection: path, class, score, pixel box and how it was found.
pub fn detect(g: &Global, a: &FilesArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let opts = detect_options(g)?;
    for path in &a.files {
        for d in inference::detect(&read_feature_file(path)?, &net, &opts)? {
            let b = d.image_bbox;
            println!(
                "{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\t{}",
                path.display(),
                net.classes[d.label].name,
                d.score,
                b.x0,
                b.y0,
                b.x1,
                b.y1,
                if d.fallback { "window" } else { "corners" }
            );
        }
    }
    Ok(())
}

fn print_grid(grid: &ScoreGrid) {
    for r in 0..grid.height {
        let row: Vec<String> = (0..grid.width)
            .map(|c| {
                let i = r * grid.width + c;
                if grid.valid[i] {
                    format!("{:.2}", grid.values[i])
                } else {
                    "-".into()
                }
            })
            .collect();
        println!("{}", row.join("\t"));
    }
}

fn write_heatmap(grid: &ScoreGrid, path: &std::path::Path) -> anyhow::Result<()> {
    let valid = || grid.values.iter().zip(&grid.valid).filter(|(_, &ok)| ok).map(|(v, _)| *v);
    let (lo, hi) = (valid().fold(f64::INFINITY, f64::min), valid().fold(f64::NEG_INFINITY, f64::max));
    export_heatmap(grid, path, lo, hi)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    pub file: PathBuf,
    /// Class whose model explains the object (default: the predicted one).
    #[arg(long)]
    pub class: Option<usize>,
}

/// Occlusion scores over the class window (positive means occluded); `--out`
/// also writes them as a heatmap.
pub fn localize(g: &Global, a: &LocalizeArgs) -> anyhow::Result<()> {
    let (net, _) = model(g)?;
    let opts = classify_options(g);
    let acts = net.bank.activation_tensor(&read_feature_file(&a.file)?)?;
    let class = match a.class {
        Some(c) => c,
        None => classify_activations(&acts, &net, opts)?.predicted,
    };
    let grid = occlusion_scores(&acts, &net, class, opts.omega)?;
    println!("class\t{}", net.classes.get(class).map_or("?", |c| c.name.as_str()));
    print_grid(&grid);
    if let Some(out) = &g.out {
        write_heatmap(&grid, out)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub class: usize,
    /// Part tag: ct, tl or br.
    #[arg(long, default_value = "ct")]
    pub part: String,
}

/// Per-cell detection score of one part at every window center.
pub fn heatmap(g: &Global, a: &HeatmapArgs) -> anyhow::Result<()> {
    let out = required(&g.out, "out")?;
    let (net, _) = model(g)?;
    let corner =
        Corner::from_tag(&a.part).ok_or_else(|| compnet::Error::Config(format!("unknown part {:?}", a.part)))?;
    let omega = g.omega.unwrap_or(DetectOptions::default().omega);
    let dm = detection_map(&read_feature_file(&a.file)?, &net, a.class, corner, omega)?;
    let mut grid = dm.r.clone();
    let n = dm.normalizer();
    grid.values.iter_mut().for_each(|v| *v /= n);
    write_heatmap(&grid, out)
}
