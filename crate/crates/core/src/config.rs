//! Run configuration.
//!
//! A config file is a list of `key = value` lines; `#` starts a comment and
//! sections are spelled as dotted keys (`retrain.mu = 1.0`). Relative paths are
//! resolved against the directory of the config file. See the README for the
//! full key list.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{gen_synthetic, load_csv, load_idx, Dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::network::{LrSchedule, SgdConfig};
use crate::retrain::RetrainConfig;
use crate::scheduler::RateSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// Dense only: input → 256 → 128 → classes.
    Mlp,
    /// Three 3×3 conv blocks (8/16/32 channels, 2×2 max pool) → 128 → classes.
    CnnS,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Arch> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "cnn-s" => Ok(Arch::CnnS),
            other => Err(Error::config(
                "arch",
                format!("unknown architecture `{other}` (mlp, cnn-s)"),
            )),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Mlp => "mlp",
            Arch::CnnS => "cnn-s",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
    Synthetic {
        kind: SyntheticKind,
        n_per_class: usize,
        classes: usize,
        noise: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainSettings {
    pub enabled: bool,
    pub reg_c: Vec<f64>,
    pub mu: f64,
    pub mp_batch_size: usize,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub dataset: DatasetSpec,
    /// Held-out fraction when the dataset has no explicit test split; 0 disables it.
    pub test_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ra_schedule: RateSchedule,
    pub sgd: SgdConfig,
    pub retrain: RetrainSettings,
    pub output_dir: PathBuf,
    /// When false the wall-clock columns of metrics.csv are written as 0.
    pub timing: bool,
}

const KEYS: &[&str] = &[
    "arch",
    "epochs",
    "seed",
    "ra_schedule",
    "dataset.kind",
    "dataset.train_images",
    "dataset.train_labels",
    "dataset.test_images",
    "dataset.test_labels",
    "dataset.train_limit",
    "dataset.test_limit",
    "dataset.train",
    "dataset.test",
    "dataset.n_per_class",
    "dataset.classes",
    "dataset.noise",
    "dataset.seed",
    "dataset.test_fraction",
    "sgd.lr",
    "sgd.momentum",
    "sgd.mini_batch",
    "retrain.enabled",
    "retrain.reg_c",
    "retrain.mu",
    "retrain.mp_batch_size",
    "retrain.dropout_rate",
    "output.dir",
    "output.timing",
];

struct Raw {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Raw {
    fn parse(text: &str, base: &Path) -> Result<Raw> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
        }
        Ok(Raw {
            values,
            base: base.to_path_buf(),
        })
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.str(key).ok_or_else(|| Error::config(key, "missing"))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(|p| self.base.join(p))
    }

    fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::config(key, "missing"))
    }

    fn reject(&self, keys: &[&str], why: &str) -> Result<()> {
        match keys.iter().find(|k| self.values.contains_key(**k)) {
            Some(k) => Err(Error::config(*k, why.to_string())),
            None => Ok(()),
        }
    }
}

const IDX_KEYS: &[&str] = &[
    "dataset.train_images",
    "dataset.train_labels",
    "dataset.test_images",
    "dataset.test_labels",
    "dataset.train_limit",
    "dataset.test_limit",
];
const CSV_KEYS: &[&str] = &["dataset.train", "dataset.test"];
const SYNTH_KEYS: &[&str] = &[
    "dataset.n_per_class",
    "dataset.classes",
    "dataset.noise",
    "dataset.seed",
];

fn parse_dataset(raw: &Raw) -> Result<DatasetSpec> {
    let kind = raw.required("dataset.kind")?;
    match kind {
        "idx" => {
            raw.reject(CSV_KEYS, "not used by idx datasets")?;
            raw.reject(SYNTH_KEYS, "not used by idx datasets")?;
            let test = match (raw.path("dataset.test_images"), raw.path("dataset.test_labels")) {
                (Some(i), Some(l)) => Some((i, l)),
                (None, None) => None,
                _ => {
                    return Err(Error::config(
                        "dataset.test_images",
                        "test images and labels must be given together",
                    ))
                }
            };
            Ok(DatasetSpec::Idx {
                train_images: raw.required_path("dataset.train_images")?,
                train_labels: raw.required_path("dataset.train_labels")?,
                test,
                train_limit: raw.get("dataset.train_limit")?,
                test_limit: raw.get("dataset.test_limit")?,
            })
        }
        "csv" => {
            raw.reject(IDX_KEYS, "not used by csv datasets")?;
            raw.reject(SYNTH_KEYS, "not used by csv datasets")?;
            Ok(DatasetSpec::Csv {
                train: raw.required_path("dataset.train")?,
                test: raw.path("dataset.test"),
            })
        }
        "blobs" | "spirals" => {
            raw.reject(IDX_KEYS, "not used by synthetic datasets")?;
            raw.reject(CSV_KEYS, "not used by synthetic datasets")?;
            let n_per_class = raw.get_or("dataset.n_per_class", 200usize)?;
            let classes = raw.get_or("dataset.classes", 3usize)?;
            let noise = raw.get_or("dataset.noise", 0.1f64)?;
            if n_per_class == 0 {
                return Err(Error::config("dataset.n_per_class", "must be at least 1"));
            }
            if classes < 2 {
                return Err(Error::config("dataset.classes", "must be at least 2"));
            }
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::config("dataset.noise", "must be non-negative"));
            }
            Ok(DatasetSpec::Synthetic {
                kind: kind.parse()?,
                n_per_class,
                classes,
                noise,
                seed: raw.get_or("dataset.seed", 0u64)?,
            })
        }
        other => Err(Error::config(
            "dataset.kind",
            format!("unknown kind `{other}` (idx, csv, blobs, spirals)"),
        )),
    }
}

fn parse_reg_c(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split([',', '/'])
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("retrain.reg_c", format!("cannot parse `{v}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() || values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::config("retrain.reg_c", "every C must be positive and finite"));
    }
    Ok(values)
}

impl TrainConfig {
    /// Parses config text; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<TrainConfig> {
        let raw = Raw::parse(text, base_dir)?;
        let arch: Arch = raw.required("arch")?.parse()?;
        let epochs: usize = raw.get("epochs")?.ok_or_else(|| Error::config("epochs", "missing"))?;
        if epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        let seed: u64 = raw.get("seed")?.ok_or_else(|| Error::config("seed", "missing"))?;

        let ra_schedule = RateSchedule::parse(raw.str("ra_schedule").unwrap_or("0:1.0"), epochs)
            .map_err(|e| Error::config("ra_schedule", e.to_string()))?;
        let lr = LrSchedule::parse(raw.str("sgd.lr").unwrap_or("0:0.1"), epochs)
            .map_err(|e| Error::config("sgd.lr", e.to_string()))?;
        let momentum = raw.get_or("sgd.momentum", 0.0f64)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("sgd.momentum", "must lie in [0, 1)"));
        }
        let mini_batch = raw.get_or("sgd.mini_batch", 32usize)?;
        if mini_batch == 0 {
            return Err(Error::config("sgd.mini_batch", "must be at least 1"));
        }

        let reg_c = parse_reg_c(raw.str("retrain.reg_c").unwrap_or("1"))?;
        let expected_layers = match arch {
            Arch::Mlp => 3,
            Arch::CnnS => 2,
        };
        if reg_c.len() != 1 && reg_c.len() != expected_layers {
            return Err(Error::config(
                "retrain.reg_c",
                format!(
                    "{} has {expected_layers} dense layers, got {} values",
                    arch,
                    reg_c.len()
                ),
            ));
        }
        let mu = raw.get_or("retrain.mu", 1.0f64)?;
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::config("retrain.mu", format!("{mu} outside (0, 1]")));
        }
        let mp_batch_size = raw.get_or("retrain.mp_batch_size", 1024usize)?;
        if mp_batch_size == 0 {
            return Err(Error::config("retrain.mp_batch_size", "must be at least 1"));
        }
        let dropout_rate = raw.get_or("retrain.dropout_rate", 0.0f64)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config("retrain.dropout_rate", "must lie in [0, 1)"));
        }
        let retrain = RetrainSettings {
            enabled: raw.get_or("retrain.enabled", true)?,
            reg_c,
            mu,
            mp_batch_size,
            dropout_rate,
        };

        let dataset = parse_dataset(&raw)?;
        let test_fraction = raw.get_or("dataset.test_fraction", 0.2f64)?;
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("dataset.test_fraction", "must lie in [0, 1)"));
        }

        Ok(TrainConfig {
            arch,
            dataset,
            test_fraction,
            epochs,
            seed,
            ra_schedule,
            sgd: SgdConfig {
                lr,
                momentum,
                mini_batch,
                seed,
            },
            retrain,
            output_dir: raw.path("output.dir").unwrap_or_else(|| base_dir.join("out")),
            timing: raw.get_or("output.timing", true)?,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        TrainConfig::parse(&text, base)
    }

    /// Same run with a different seed (data generation seed is kept).
    pub fn with_seed(mut self, seed: u64) -> TrainConfig {
        self.seed = seed;
        self.sgd.seed = seed;
        self
    }

    pub fn retrain_config(&self, epoch: usize) -> RetrainConfig {
        RetrainConfig {
            reg_c: self.retrain.reg_c.clone(),
            mu: self.retrain.mu,
            mp_batch_size: self.retrain.mp_batch_size,
            seed: self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        }
    }

    /// Loads `(train, test)`. Without an explicit test set, a seeded
    /// `test_fraction` of the training data is held out (none when 0).
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test,
                train_limit,
                test_limit,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                if let Some(n) = train_limit {
                    train = train.take(*n)?;
                }
                let test = match test {
                    Some((i, l)) => {
                        let t = load_idx(i, l)?;
                        Some(match test_limit {
                            Some(n) => t.take(*n)?,
                            None => t,
                        })
                    }
                    None => None,
                };
                (train, test)
            }
            DatasetSpec::Csv { train, test } => (load_csv(train)?, test.as_ref().map(load_csv).transpose()?),
            DatasetSpec::Synthetic {
                kind,
                n_per_class,
                classes,
                noise,
                seed,
            } => (gen_synthetic(*kind, *n_per_class, *classes, *noise, *seed)?, None),
        };
        let (train, test) = match test {
            Some(t) => (train, Some(t)),
            None if self.test_fraction > 0.0 => {
                let seed = match self.dataset {
                    DatasetSpec::Synthetic { seed, .. } => seed,
                    _ => 0,
                };
                let (a, b) = train.split(self.test_fraction, seed)?;
                (a, Some(b))
            }
            None => (train, None),
        };
        let classes = train.num_classes().max(test.as_ref().map_or(0, Dataset::num_classes));
        let train = train.with_num_classes(classes)?;
        let test = test.map(|t| t.with_num_classes(classes)).transpose()?;
        if let Some(t) = &test {
            if t.shape() != train.shape() {
                return Err(Error::InvalidDataset(format!(
                    "test samples are {:?}, training samples are {:?}",
                    t.shape(),
                    train.shape()
                )));
            }
        }
        Ok((train, test))
    }

    /// Canonical text of the fully resolved config, defaults included.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("arch", self.arch.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("ra_schedule", self.ra_schedule.to_string());
        match &self.dataset {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test,
                train_limit,
                test_limit,
            } => {
                kv("dataset.kind", "idx".into());
                kv("dataset.train_images", train_images.display().to_string());
                kv("dataset.train_labels", train_labels.display().to_string());
                if let Some((i, l)) = test {
                    kv("dataset.test_images", i.display().to_string());
                    kv("dataset.test_labels", l.display().to_string());
                }
                if let Some(n) = train_limit {
                    kv("dataset.train_limit", n.to_string());
                }
                if let Some(n) = test_limit {
                    kv("dataset.test_limit", n.to_string());
                }
            }
            DatasetSpec::Csv { train, test } => {
                kv("dataset.kind", "csv".into());
                kv("dataset.train", train.display().to_string());
                if let Some(t) = test {
                    kv("dataset.test", t.display().to_string());
                }
            }
            DatasetSpec::Synthetic {
                kind,
                n_per_class,
                classes,
                noise,
                seed,
            } => {
                kv("dataset.kind", kind.to_string());
                kv("dataset.n_per_class", n_per_class.to_string());
                kv("dataset.classes", classes.to_string());
                kv("dataset.noise", noise.to_string());
                kv("dataset.seed", seed.to_string());
            }
        }
        kv("dataset.test_fraction", self.test_fraction.to_string());
        kv("sgd.lr", self.sgd.lr.to_string());
        kv("sgd.momentum", self.sgd.momentum.to_string());
        kv("sgd.mini_batch", self.sgd.mini_batch.to_string());
        kv("retrain.enabled", self.retrain.enabled.to_string());
        let reg_c: Vec<String> = self.retrain.reg_c.iter().map(f64::to_string).collect();
        kv("retrain.reg_c", reg_c.join(","));
        kv("retrain.mu", self.retrain.mu.to_string());
        kv("retrain.mp_batch_size", self.retrain.mp_batch_size.to_string());
        kv("retrain.dropout_rate", self.retrain.dropout_rate.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        kv("output.timing", self.timing.to_string());
        s
    }
}
