//! `train-cls` and `train-det`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use compnet::init::{init_context_dictionary, BoxedMap};
use compnet::io::config::{apply_train_config, train_config_pairs, TRAIN_KEYS};
use compnet::io::write_model;
use compnet::training::{train_classifier, train_detector, DetSample, EpochLog, TrainConfig};

use crate::commands::prepare::init_options;
use crate::data::{config, load_dataset, model, required};
use crate::Global;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON-lines training log, one line per epoch.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn train_config(g: &Global) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_train_config(&mut cfg, &config(g)?)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.omega {
        cfg.omega = w;
    }
    Ok(cfg)
}

fn run(
    g: &Global,
    a: &TrainArgs,
    train: impl FnOnce(
        &mut compnet::model::CompositionalNet,
        &TrainConfig,
        Option<&mut dyn Write>,
    ) -> compnet::Result<Vec<EpochLog>>,
) -> anyhow::Result<()> {
    let out = required(&g.out, "out")?;
    let (mut net, mut echo) = model(g)?;
    let cfg = train_config(g)?;
    let mut log = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let history = train(&mut net, &cfg, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(last) = history.last() {
        println!(
            "epoch {} loss {:.5} accuracy {}",
            last.epoch,
            last.loss,
            last.accuracy.map_or("-".into(), |x| format!("{x:.4}"))
        );
    }
    echo.retain(|(k, _)| !TRAIN_KEYS.contains(&k.as_str()));
    echo.extend(train_config_pairs(&cfg));
    write_model(out, &net, &echo)?;
    Ok(())
}

pub fn train_cls(g: &Global, a: &TrainArgs) -> anyhow::Result<()> {
    let data: Vec<_> = load_dataset(&a.data, false)?.into_iter().map(|s| (s.map, s.row.class)).collect();
    run(g, a, |net, cfg, log| train_classifier(net, &data, cfg, log))
}

pub fn train_det(g: &Global, a: &TrainArgs) -> anyhow::Result<()> {
    let scenes = load_dataset(&a.data, false)?;
    let opts = init_options(g)?;
    let boxed: Vec<BoxedMap> =
        scenes.iter().map(|s| BoxedMap { map: &s.map, label: s.row.class, bbox: s.grid_bbox() }).collect();
    let dict = init_context_dictionary(&boxed, &opts)?;
    run(g, a, |net, cfg, log| {
        let samples = scenes
            .iter()
            .map(|s| DetSample::new(s.map.clone(), s.row.class, s.grid_bbox(), net, Some(&dict), opts.rf_margin))
            .collect::<compnet::Result<Vec<_>>>()?;
        train_detector(net, &samples, cfg, log)
    })
}
