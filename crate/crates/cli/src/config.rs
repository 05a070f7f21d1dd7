//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may be
//! overridden on the command line with `--key value`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use openhybrid::model::{Architecture, Regime};
use openhybrid::net::Activation;
use openhybrid::trainer::TrainConfig;

/// Every recognized key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "synthetic | idx"),
    ("n_per_class", "synthetic: samples per class (default 200)"),
    ("n_classes", "synthetic: number of clusters (default 10)"),
    ("dim", "synthetic: feature dimension (default 2)"),
    ("spread", "synthetic: cluster standard deviation (default 0.5)"),
    ("data_seed", "synthetic: layout and sampling seed (default 0)"),
    ("images", "idx: path to the image file"),
    ("labels", "idx: path to the label file"),
    ("max_per_class", "idx: keep at most this many samples per class (default all)"),
    ("k_known", "number of known classes (default 6)"),
    ("seed", "partition and training seed for train/eval/histogram (default 0)"),
    ("seeds", "comma-separated partition seeds for compare (default 0..n_partitions)"),
    ("n_partitions", "partitions for compare when seeds is absent (default 5)"),
    ("regime", "joint | pretrained_encoder | softmax_only | raw_input_flow (default joint)"),
    ("lambda", "density loss weight (default 1)"),
    ("epochs", "epochs per phase (default 40)"),
    ("batch_size", "default 64"),
    ("lr_classifier", "momentum-SGD learning rate (default 0.01)"),
    ("lr_flow", "Adam learning rate (default 0.001)"),
    ("momentum", "default 0.9"),
    ("clip_norm", "global gradient norm cap per sub-step (default 10)"),
    ("latent_dim", "encoder output width (default 16)"),
    ("encoder_hidden", "comma-separated hidden widths (default 64,64 synthetic, 256,128 idx)"),
    ("activation", "tanh | relu | identity (default tanh synthetic, relu idx)"),
    ("classifier_hidden", "comma-separated hidden widths, empty for linear (default empty)"),
    ("flow_pairs", "ActNorm + coupling pairs (default 8)"),
    ("flow_hidden", "coupling conditioner width (default 64)"),
    ("s", "threshold slack in score units, may be negative (default 0)"),
    ("out_dir", "output directory (required)"),
    ("checkpoint", "checkpoint path (default <out_dir>/checkpoint.bin)"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        n_per_class: usize,
        n_classes: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        max_per_class: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub k_known: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub s: f64,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
}

/// Parses `key = value` lines into a map, rejecting malformed lines.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value, got {line:?}", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", no + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Values {
    map: BTreeMap<String, String>,
}

impl Values {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| ConfigError(format!("invalid list entry {s:?} for {key}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

impl ExperimentConfig {
    /// Reads `path`, then applies `overrides` in order.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = parse_pairs(&text)?;
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = map.keys().find(|k| !KEYS.iter().any(|(known, _)| known == k)) {
            return Err(ConfigError(format!("unknown key {bad:?}")));
        }
        let v = Values { map };

        let dataset = match v.raw("dataset").unwrap_or("synthetic") {
            "synthetic" => DatasetSpec::Synthetic {
                n_per_class: v.get("n_per_class", 200)?,
                n_classes: v.get("n_classes", 10)?,
                dim: v.get("dim", 2)?,
                spread: v.get("spread", 0.5)?,
                seed: v.get("data_seed", 0)?,
            },
            "idx" => DatasetSpec::Idx {
                images: v
                    .raw("images")
                    .map(PathBuf::from)
                    .ok_or_else(|| ConfigError("dataset = idx needs images".into()))?,
                labels: v
                    .raw("labels")
                    .map(PathBuf::from)
                    .ok_or_else(|| ConfigError("dataset = idx needs labels".into()))?,
                max_per_class: v.raw("max_per_class").map(|_| v.get("max_per_class", 0)).transpose()?,
            },
            other => return Err(ConfigError(format!("unknown dataset {other:?}"))),
        };

        let mut arch = match dataset {
            DatasetSpec::Synthetic { dim, .. } => Architecture::small(dim, 0),
            DatasetSpec::Idx { .. } => Architecture::image(784, 0),
        };
        arch.latent_dim = v.get("latent_dim", arch.latent_dim)?;
        if let Some(h) = v.list("encoder_hidden")? {
            arch.encoder_hidden = h;
        }
        if let Some(h) = v.list("classifier_hidden")? {
            arch.classifier_hidden = h;
        }
        if let Some(a) = v.raw("activation") {
            arch.activation = Activation::parse(a).ok_or_else(|| ConfigError(format!("unknown activation {a:?}")))?;
        }
        arch.flow_pairs = v.get("flow_pairs", arch.flow_pairs)?;
        arch.flow_hidden = v.get("flow_hidden", arch.flow_hidden)?;

        let defaults = TrainConfig::default();
        let regime = match v.raw("regime") {
            None => defaults.regime,
            Some(r) => r.parse::<Regime>().map_err(|e| ConfigError(e.to_string()))?,
        };
        let seed: u64 = v.get("seed", 0)?;
        let train = TrainConfig {
            lambda: v.get("lambda", defaults.lambda)?,
            epochs: v.get("epochs", defaults.epochs)?,
            batch_size: v.get("batch_size", defaults.batch_size)?,
            lr_classifier: v.get("lr_classifier", defaults.lr_classifier)?,
            lr_flow: v.get("lr_flow", defaults.lr_flow)?,
            momentum: v.get("momentum", defaults.momentum)?,
            clip_norm: v.get("clip_norm", defaults.clip_norm)?,
            seed,
            regime,
        };
        train.validate().map_err(|e| ConfigError(e.to_string()))?;

        let seeds = match v.list("seeds")? {
            Some(s) => s,
            None => (0..v.get::<u64>("n_partitions", 5)?).collect(),
        };
        if seeds.is_empty() {
            return Err(ConfigError("at least one partition seed is required".into()));
        }

        let out_dir = v
            .raw("out_dir")
            .map(PathBuf::from)
            .ok_or_else(|| ConfigError("out_dir is required".into()))?;
        let checkpoint = v
            .raw("checkpoint")
            .map(PathBuf::from)
            .unwrap_or_else(|| out_dir.join("checkpoint.bin"));

        Ok(ExperimentConfig {
            dataset,
            k_known: v.get("k_known", 6)?,
            seed,
            seeds,
            arch,
            train,
            s: v.get("s", 0.0)?,
            out_dir,
            checkpoint,
        })
    }
}

/// Splits `--key value` pairs, rejecting anything else.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| ConfigError(format!("expected --key, got {flag:?}")))?;
        let value = it
            .next()
            .ok_or_else(|| ConfigError(format!("missing value for --{key}")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}
