//! Plain-text configuration: `key=value` config files mirroring the IMP and
//! training config fields (unknown keys rejected), and dataset spec strings
//! for the CLI (`idx:<images>,<labels>` or `synth:classes=..,dim=..,...`).

use std::path::{Path, PathBuf};

use crate::data::{load_idx, synth_gaussians, Dataset};
use crate::error::{Error, Result};
use crate::imp::{ImpConfig, RewindMode};
use crate::model::MlpConfig;
use crate::training::TrainConfig;

/// How a run's dataset was specified, echoed into the manifest so later
/// pipeline stages can rebuild the exact train/val split.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRef {
    pub spec: String,
    pub limit: Option<usize>,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub dataset_sha256: String,
}

impl DataRef {
    /// Rebuilds the base dataset and verifies it against the recorded hash.
    pub fn load_base(&self) -> Result<Dataset> {
        let ds = load_dataset(&self.spec, self.limit)?;
        let fp = ds.fingerprint();
        if !self.dataset_sha256.is_empty() && fp != self.dataset_sha256 {
            return Err(Error::Config(format!(
                "dataset fingerprint mismatch: manifest has {}, loaded data hashes to {fp}",
                self.dataset_sha256
            )));
        }
        Ok(ds)
    }

    /// Rebuilds the (train, val) split recorded in the manifest.
    pub fn load_split(&self) -> Result<(Dataset, Dataset)> {
        let base = self.load_base()?;
        crate::data::split(&base, self.val_fraction, self.split_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Idx { images: PathBuf, labels: PathBuf },
    Synth {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        seed: u64,
    },
}

impl DataSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("idx:") {
            let (images, labels) = rest.split_once(',').ok_or_else(|| {
                Error::Config(format!(
                    "idx spec must be idx:<images>,<labels>, got {spec:?}"
                ))
            })?;
            if images.is_empty() || labels.is_empty() {
                return Err(Error::Config(format!("idx spec has empty path: {spec:?}")));
            }
            return Ok(DataSpec::Idx {
                images: PathBuf::from(images),
                labels: PathBuf::from(labels),
            });
        }
        if let Some(rest) = spec.strip_prefix("synth:") {
            let mut classes = None;
            let mut dim = None;
            let mut per_class = None;
            let mut spread = None;
            let mut seed = None;
            for part in rest.split(',') {
                let (k, v) = part.split_once('=').ok_or_else(|| {
                    Error::Config(format!("synth spec field {part:?} is not key=value"))
                })?;
                let bad = || Error::Config(format!("bad synth value {v:?} for {k}"));
                match k {
                    "classes" => classes = Some(v.parse().map_err(|_| bad())?),
                    "dim" => dim = Some(v.parse().map_err(|_| bad())?),
                    "per_class" => per_class = Some(v.parse().map_err(|_| bad())?),
                    "spread" => spread = Some(v.parse().map_err(|_| bad())?),
                    "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                    other => {
                        return Err(Error::Config(format!("unknown synth field {other:?}")))
                    }
                }
            }
            let missing =
                |name: &str| Error::Config(format!("synth spec missing field {name:?}"));
            return Ok(DataSpec::Synth {
                classes: classes.ok_or_else(|| missing("classes"))?,
                dim: dim.ok_or_else(|| missing("dim"))?,
                per_class: per_class.ok_or_else(|| missing("per_class"))?,
                spread: spread.ok_or_else(|| missing("spread"))?,
                seed: seed.ok_or_else(|| missing("seed"))?,
            });
        }
        Err(Error::Config(format!(
            "data spec must start with idx: or synth:, got {spec:?}"
        )))
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Idx { images, labels } => load_idx(images, labels),
            DataSpec::Synth {
                classes,
                dim,
                per_class,
                spread,
                seed,
            } => synth_gaussians(*classes, *dim, *per_class, *spread, *seed),
        }
    }
}

/// Loads a dataset from a spec string, optionally truncated to the first
/// `limit` samples.
pub fn load_dataset(spec: &str, limit: Option<usize>) -> Result<Dataset> {
    let ds = DataSpec::parse(spec)?.load()?;
    match limit {
        Some(n) => ds.take_first(n),
        None => Ok(ds),
    }
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: {raw:?} is not key=value", lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn join_list<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Serializes an ImpConfig as the flat key=value pairs used by config files
/// and run manifests.
pub fn imp_config_to_kv(cfg: &ImpConfig) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("layer_sizes", join_list(&cfg.model.layer_sizes)),
        kv("init_seed", cfg.model.init_seed.to_string()),
        kv("epochs", cfg.train.epochs.to_string()),
        kv("batch_size", cfg.train.batch_size.to_string()),
        kv("base_lr", cfg.train.base_lr.to_string()),
        kv("lr_drop_factor", cfg.train.lr_drop_factor.to_string()),
        kv("lr_drop_epochs", join_list(&cfg.train.lr_drop_epochs)),
        kv("warmup_epochs", cfg.train.warmup_epochs.to_string()),
        kv("momentum", cfg.train.momentum.to_string()),
        kv("weight_decay", cfg.train.weight_decay.to_string()),
        kv("rewind_epoch", cfg.train.rewind_epoch.to_string()),
        kv("shuffle_seed", cfg.train.shuffle_seed.to_string()),
        kv("iterations", cfg.iterations.to_string()),
        kv("prune_fraction", cfg.prune_fraction.to_string()),
        kv("rewind_mode", cfg.rewind_mode.as_str().to_string()),
    ]
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad element {s:?} in {key}")))
        })
        .collect()
}

/// Builds an ImpConfig from key=value pairs; every field is required except
/// `lr_drop_epochs` and `warmup_epochs`, and unknown keys are rejected.
pub fn imp_config_from_kv(pairs: &[(String, String)]) -> Result<ImpConfig> {
    let mut layer_sizes: Option<Vec<usize>> = None;
    let mut init_seed: Option<u64> = None;
    let mut epochs: Option<usize> = None;
    let mut batch_size: Option<usize> = None;
    let mut base_lr: Option<f64> = None;
    let mut lr_drop_factor: Option<f64> = None;
    let mut lr_drop_epochs: Vec<usize> = Vec::new();
    let mut warmup_epochs: usize = 0;
    let mut momentum: Option<f64> = None;
    let mut weight_decay: Option<f64> = None;
    let mut rewind_epoch: Option<usize> = None;
    let mut shuffle_seed: Option<u64> = None;
    let mut iterations: Option<usize> = None;
    let mut prune_fraction: Option<f64> = None;
    let mut rewind_mode: Option<RewindMode> = None;

    let mut seen = std::collections::BTreeSet::new();
    for (key, value) in pairs {
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
        let bad = || Error::Config(format!("bad value {value:?} for key {key:?}"));
        match key.as_str() {
            "layer_sizes" => layer_sizes = Some(parse_list(key, value)?),
            "init_seed" => init_seed = Some(value.parse().map_err(|_| bad())?),
            "epochs" => epochs = Some(value.parse().map_err(|_| bad())?),
            "batch_size" => batch_size = Some(value.parse().map_err(|_| bad())?),
            "base_lr" => base_lr = Some(value.parse().map_err(|_| bad())?),
            "lr_drop_factor" => lr_drop_factor = Some(value.parse().map_err(|_| bad())?),
            "lr_drop_epochs" => lr_drop_epochs = parse_list(key, value)?,
            "warmup_epochs" => warmup_epochs = value.parse().map_err(|_| bad())?,
            "momentum" => momentum = Some(value.parse().map_err(|_| bad())?),
            "weight_decay" => weight_decay = Some(value.parse().map_err(|_| bad())?),
            "rewind_epoch" => rewind_epoch = Some(value.parse().map_err(|_| bad())?),
            "shuffle_seed" => shuffle_seed = Some(value.parse().map_err(|_| bad())?),
            "iterations" => iterations = Some(value.parse().map_err(|_| bad())?),
            "prune_fraction" => prune_fraction = Some(value.parse().map_err(|_| bad())?),
            "rewind_mode" => rewind_mode = Some(RewindMode::parse(value)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
    }

    let req = |name: &str| Error::Config(format!("missing config key {name:?}"));
    let config = ImpConfig {
        model: MlpConfig {
            layer_sizes: layer_sizes.ok_or_else(|| req("layer_sizes"))?,
            init_seed: init_seed.ok_or_else(|| req("init_seed"))?,
        },
        train: TrainConfig {
            epochs: epochs.ok_or_else(|| req("epochs"))?,
            batch_size: batch_size.ok_or_else(|| req("batch_size"))?,
            base_lr: base_lr.ok_or_else(|| req("base_lr"))?,
            lr_drop_factor: lr_drop_factor.ok_or_else(|| req("lr_drop_factor"))?,
            lr_drop_epochs,
            warmup_epochs,
            momentum: momentum.ok_or_else(|| req("momentum"))?,
            weight_decay: weight_decay.ok_or_else(|| req("weight_decay"))?,
            rewind_epoch: rewind_epoch.ok_or_else(|| req("rewind_epoch"))?,
            shuffle_seed: shuffle_seed.ok_or_else(|| req("shuffle_seed"))?,
        },
        iterations: iterations.ok_or_else(|| req("iterations"))?,
        prune_fraction: prune_fraction.ok_or_else(|| req("prune_fraction"))?,
        rewind_mode: rewind_mode.ok_or_else(|| req("rewind_mode"))?,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_imp_config_file(path: &Path) -> Result<ImpConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let pairs = parse_kv_text(&text)?;
    imp_config_from_kv(&pairs)
}
