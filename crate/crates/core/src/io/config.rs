//! `key = value` configuration files. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inference::DetectOptions;
use crate::init::InitOptions;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    pub origin: PathBuf,
    pub entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(origin, format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::parse(origin, format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        Ok(Self { origin: origin.to_path_buf(), entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| v.parse().map_err(|_| Error::parse(&self.origin, format!("bad value {v:?} for {key}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.entries
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::parse(&self.origin, format!("bad list item {s:?} for {key}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Error on any key outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k} in {}", self.origin.display()))),
            None => Ok(()),
        }
    }
}

pub const TRAIN_KEYS: [&str; 15] = [
    "gamma1",
    "gamma2",
    "epsilon1",
    "epsilon2",
    "lr",
    "momentum",
    "epochs",
    "batch_size",
    "lr_vmf",
    "lr_mixture",
    "lr_corner",
    "det_epochs",
    "temperature",
    "omega",
    "seed",
];

/// Overlay training hyperparameters found in `map` onto `cfg`.
pub fn apply_train_config(cfg: &mut TrainConfig, map: &ConfigMap) -> Result<()> {
    macro_rules! take {
        ($($field:ident),*) => {
            $( if let Some(v) = map.get(stringify!($field))? { cfg.$field = v; } )*
        };
    }
    take!(
        gamma1,
        gamma2,
        epsilon1,
        epsilon2,
        lr,
        momentum,
        epochs,
        batch_size,
        lr_vmf,
        lr_mixture,
        lr_corner,
        det_epochs,
        temperature,
        omega,
        seed
    );
    cfg.validate()
}

/// `key, value` pairs of every training hyperparameter, for echoing.
pub fn train_config_pairs(cfg: &TrainConfig) -> Vec<(String, String)> {
    macro_rules! pairs {
        ($($field:ident),*) => {
            vec![$( (stringify!($field).to_string(), cfg.$field.to_string()) ),*]
        };
    }
    pairs!(
        gamma1,
        gamma2,
        epsilon1,
        epsilon2,
        lr,
        momentum,
        epochs,
        batch_size,
        lr_vmf,
        lr_mixture,
        lr_corner,
        det_epochs,
        temperature,
        omega,
        seed
    )
}

pub const INIT_KEYS: [&str; 10] = [
    "k",
    "m",
    "sigma",
    "occluders",
    "prior",
    "subsample",
    "binarize_threshold",
    "context_q",
    "context_threshold",
    "rf_margin",
];

/// Overlay initialization options found in `map` onto `opts`.
pub fn apply_init_config(opts: &mut InitOptions, map: &ConfigMap) -> Result<()> {
    macro_rules! take {
        ($($field:ident),*) => {
            $( if let Some(v) = map.get(stringify!($field))? { opts.$field = v; } )*
        };
    }
    take!(k, m, sigma, occluders, prior, subsample, binarize_threshold, context_q, context_threshold, rf_margin);
    if opts.k == 0 || opts.m == 0 || opts.occluders == 0 {
        return Err(Error::Config("k, m and occluders must be positive".into()));
    }
    if !(opts.prior > 0.0 && opts.prior < 1.0) {
        return Err(Error::Config(format!("prior must lie in (0, 1), got {}", opts.prior)));
    }
    if !(opts.sigma > 0.0 && opts.sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {}", opts.sigma)));
    }
    Ok(())
}

/// `key = value` echo of initialization options for model files.
pub fn init_config_pairs(opts: &InitOptions) -> Vec<(String, String)> {
    [
        ("k", opts.k.to_string()),
        ("m", opts.m.to_string()),
        ("sigma", opts.sigma.to_string()),
        ("occluders", opts.occluders.to_string()),
        ("prior", opts.prior.to_string()),
        ("subsample", opts.subsample.to_string()),
        ("binarize_threshold", opts.binarize_threshold.to_string()),
        ("context_q", opts.context_q.to_string()),
        ("context_threshold", opts.context_threshold.to_string()),
        ("rf_margin", opts.rf_margin.to_string()),
        ("init_seed", opts.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub const DETECT_KEYS: [&str; 5] = ["thresholds", "nms_radius", "search_radius", "max_per_class", "stride"];

/// Overlay detection options found in `map` onto `opts`. `thresholds` is a
/// comma-separated list, one per class or a single shared value.
pub fn apply_detect_config(opts: &mut DetectOptions, map: &ConfigMap) -> Result<()> {
    if let Some(t) = map.get_list("thresholds")? {
        opts.thresholds = t;
    }
    macro_rules! take {
        ($($field:ident),*) => {
            $( if let Some(v) = map.get(stringify!($field))? { opts.$field = v; } )*
        };
    }
    take!(nms_radius, search_radius, max_per_class, stride);
    if opts.nms_radius == 0 || opts.stride == 0 {
        return Err(Error::Config("nms_radius and stride must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overlays() {
        let text = "# training\ngamma1 = 0\nepochs=7 # short\n\nomega = 0.5\nthresholds = 1.5, 2\n";
        let map = ConfigMap::parse(text, Path::new("c")).unwrap();
        let mut cfg = TrainConfig::default();
        apply_train_config(&mut cfg, &map).unwrap();
        assert_eq!((cfg.gamma1, cfg.epochs, cfg.omega), (0.0, 7, 0.5));
        assert_eq!(map.get_list::<f64>("thresholds").unwrap(), Some(vec![1.5, 2.0]));
        assert!(map.check_keys(&TRAIN_KEYS).is_err());
        let mut det = DetectOptions::default();
        apply_detect_config(&mut det, &map).unwrap();
        assert_eq!(det.thresholds, vec![1.5, 2.0]);
        let mut init = InitOptions::default();
        apply_init_config(&mut init, &ConfigMap::parse("k = 8\nprior = 0.3", Path::new("i")).unwrap()).unwrap();
        assert_eq!((init.k, init.prior), (8, 0.3));
        assert!(apply_init_config(&mut init, &ConfigMap::parse("prior = 1", Path::new("i")).unwrap()).is_err());

        let echo = train_config_pairs(&cfg);
        let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let mut again = TrainConfig::default();
        apply_train_config(&mut again, &ConfigMap::parse(&text, Path::new("e")).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_malformed() {
        let p = Path::new("c");
        assert!(ConfigMap::parse("gamma1", p).is_err());
        assert!(ConfigMap::parse("a=1\na=2", p).is_err());
        let map = ConfigMap::parse("epochs = many", p).unwrap();
        assert!(apply_train_config(&mut TrainConfig::default(), &map).is_err());
        let map = ConfigMap::parse("momentum = 1.5", p).unwrap();
        assert!(apply_train_config(&mut TrainConfig::default(), &map).is_err());
    }
}
