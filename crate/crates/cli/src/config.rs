//! Experiment configuration: a flat TOML schema, validation and defaults.
//!
//! Channel keys: `powers` or `total_power` + `power_split`, `noise_var`,
//! `channel_uses` or `channel_uses_per_dim`, `side_channel_bits`.
//! Model keys: `loss`, `ridge`, `classes`, `features`.
//! Training keys: `policy`, `iterations`, `seed`, `lr_schedule`,
//! `learning_rate`, `init`, `init_std`, `eval_every`, `topq_scalar_bits`,
//! `gradient_bound`, `domain_radius`.
//! Data keys: `dataset`, `samples_per_user`, `scale_factors`, `noise`,
//! `label_sets`, `test_samples`, `data_seed`, `mnist_images`,
//! `mnist_labels`, `mnist_test_images`, `mnist_test_labels`.
//! Output: `out_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use macfl::channel::{ChannelError, MacSpec};
use macfl::trainer::{Init, Loss, LossKind, Policy};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("`{field}` refers to missing file {path}")]
    MissingFile { field: &'static str, path: PathBuf },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `1 / (lambda t)`; `lambda` is the data's strong-convexity constant.
    InverseT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum InitKind {
    #[default]
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum DatasetKind {
    #[default]
    Synthetic,
    Mnist,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    powers: Option<Vec<f64>>,
    total_power: Option<f64>,
    power_split: Option<Vec<f64>>,
    #[serde(default = "defaults::noise_var")]
    noise_var: f64,
    channel_uses: Option<u64>,
    channel_uses_per_dim: Option<f64>,
    #[serde(default)]
    side_channel_bits: f64,

    #[serde(default = "defaults::loss")]
    loss: LossKind,
    #[serde(default)]
    ridge: f64,
    classes: Option<usize>,
    features: Option<usize>,

    #[serde(default = "defaults::policy")]
    policy: Policy,
    #[serde(default = "defaults::iterations")]
    iterations: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    lr_schedule: Schedule,
    learning_rate: Option<f64>,
    #[serde(default)]
    init: InitKind,
    #[serde(default = "defaults::init_std")]
    init_std: f64,
    #[serde(default = "defaults::eval_every")]
    eval_every: u64,
    #[serde(default = "defaults::topq_scalar_bits")]
    topq_scalar_bits: u32,
    gradient_bound: Option<f64>,
    domain_radius: Option<f64>,

    #[serde(default)]
    dataset: DatasetKind,
    samples_per_user: Option<Vec<usize>>,
    scale_factors: Option<Vec<f64>>,
    #[serde(default = "defaults::noise")]
    noise: f64,
    label_sets: Option<Vec<Vec<u32>>>,
    #[serde(default)]
    test_samples: usize,
    data_seed: Option<u64>,
    mnist_images: Option<PathBuf>,
    mnist_labels: Option<PathBuf>,
    mnist_test_images: Option<PathBuf>,
    mnist_test_labels: Option<PathBuf>,

    out_dir: Option<PathBuf>,
}

mod defaults {
    use super::*;

    pub fn noise_var() -> f64 {
        1.0
    }
    pub fn loss() -> LossKind {
        LossKind::Softmax
    }
    pub fn policy() -> Policy {
        Policy::MacAware
    }
    pub fn iterations() -> u64 {
        1000
    }
    pub fn init_std() -> f64 {
        0.01
    }
    pub fn eval_every() -> u64 {
        10
    }
    pub fn topq_scalar_bits() -> u32 {
        32
    }
    pub fn noise() -> f64 {
        0.5
    }
}

pub const DEFAULT_SAMPLES_PER_USER: usize = 500;
pub const MNIST_FEATURES: usize = 784;

#[derive(Debug, Clone, PartialEq)]
pub struct MnistFiles {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub test: Option<(PathBuf, PathBuf)>,
    /// Optional per-user caps on the number of examples.
    pub samples_per_user: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetDescriptor {
    Synthetic {
        samples_per_user: Vec<usize>,
        noise: f64,
        test_samples: usize,
    },
    Mnist(MnistFiles),
}

/// Validated experiment description with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mac: MacSpec,
    pub loss: Loss,
    pub features: usize,
    pub policy: Policy,
    pub iterations: u64,
    pub seed: u64,
    pub data_seed: u64,
    pub schedule: Schedule,
    pub learning_rate: Option<f64>,
    pub init: Init,
    pub eval_every: u64,
    pub topq_scalar_bits: u32,
    pub side_channel_bits: f64,
    pub gradient_bound: Option<f64>,
    pub domain_radius: Option<f64>,
    pub scale_factors: Vec<f64>,
    pub label_sets: Vec<Vec<u32>>,
    pub data: DatasetDescriptor,
    pub out_dir: Option<PathBuf>,
    /// Exact bytes of the source file, for hashing.
    pub source: String,
}

impl ExperimentConfig {
    pub fn users(&self) -> usize {
        self.mac.users()
    }

    pub fn dim(&self) -> usize {
        self.mac.dim()
    }
}

/// Reads and validates a config file; relative paths resolve against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, &path.display().to_string(), base)
}

pub fn parse_config(
    text: &str,
    origin: &str,
    base: &Path,
) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    build(raw, text, base)
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn build(raw: RawConfig, text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let powers = match (&raw.powers, raw.total_power, &raw.power_split) {
        (Some(p), None, None) => p.clone(),
        (None, Some(total), Some(split)) => {
            positive("total_power", total)?;
            if split.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(invalid("power_split", "fractions must be finite and >= 0"));
            }
            let sum: f64 = split.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(invalid(
                    "power_split",
                    format!("fractions must sum to 1, got {sum}"),
                ));
            }
            split.iter().map(|s| s * total).collect()
        }
        (None, Some(_), None) => return Err(invalid("power_split", "required with `total_power`")),
        (None, None, Some(_)) => return Err(invalid("total_power", "required with `power_split`")),
        (None, None, None) => {
            return Err(invalid(
                "powers",
                "set `powers` or `total_power` with `power_split`",
            ))
        }
        _ => {
            return Err(invalid(
                "powers",
                "use either `powers` or `total_power` + `power_split`, not both",
            ))
        }
    };
    let users = powers.len();

    let features = match (raw.dataset, raw.features) {
        (DatasetKind::Mnist, None) => MNIST_FEATURES,
        (DatasetKind::Mnist, Some(f)) if f != MNIST_FEATURES => {
            return Err(invalid(
                "features",
                format!("MNIST images have {MNIST_FEATURES} pixels, got {f}"),
            ))
        }
        (_, Some(0)) => return Err(invalid("features", "must be at least 1")),
        (_, Some(f)) => f,
        (DatasetKind::Synthetic, None) => {
            return Err(invalid("features", "required for synthetic data"))
        }
    };
    if raw.dataset == DatasetKind::Mnist && raw.loss != LossKind::Softmax {
        return Err(invalid("loss", "MNIST runs use the softmax loss"));
    }
    let classes = match (raw.loss, raw.classes) {
        (LossKind::Softmax, None) => 10,
        (LossKind::Softmax, Some(c)) if c < 2 => {
            return Err(invalid("classes", "softmax needs at least 2 classes"))
        }
        (LossKind::Softmax, Some(c)) => c,
        (LossKind::Logistic, _) => 2,
        (LossKind::Quadratic, _) => 1,
    };
    if raw.dataset == DatasetKind::Mnist && classes != 10 {
        return Err(invalid("classes", "MNIST has 10 classes"));
    }
    if !(raw.ridge.is_finite() && raw.ridge >= 0.0) {
        return Err(invalid(
            "ridge",
            format!("must be finite and >= 0, got {}", raw.ridge),
        ));
    }
    let loss =
        Loss::new(raw.loss, raw.ridge, classes).map_err(|e| invalid("loss", e.to_string()))?;
    let dim = loss.dim(features);

    let channel_uses = match (raw.channel_uses, raw.channel_uses_per_dim) {
        (Some(s), None) => s,
        (None, Some(r)) => (positive("channel_uses_per_dim", r)? * dim as f64).round() as u64,
        (None, None) => {
            return Err(invalid(
                "channel_uses",
                "set `channel_uses` or `channel_uses_per_dim`",
            ))
        }
        (Some(_), Some(_)) => {
            return Err(invalid(
                "channel_uses",
                "set only one of `channel_uses` and `channel_uses_per_dim`",
            ))
        }
    };
    let mac = MacSpec::new(powers, raw.noise_var, channel_uses, dim).map_err(|e| match e {
        ChannelError::InvalidPower { .. }
        | ChannelError::NoUsers
        | ChannelError::TooManyUsers(_) => invalid(
            if raw.powers.is_some() {
                "powers"
            } else {
                "power_split"
            },
            e.to_string(),
        ),
        ChannelError::InvalidNoise(_) => invalid("noise_var", e.to_string()),
        ChannelError::NoChannelUses => invalid("channel_uses", e.to_string()),
        other => invalid("powers", other.to_string()),
    })?;

    if raw.iterations == 0 {
        return Err(invalid("iterations", "must be at least 1"));
    }
    if raw.eval_every == 0 {
        return Err(invalid("eval_every", "must be at least 1"));
    }
    if raw.topq_scalar_bits == 0 {
        return Err(invalid("topq_scalar_bits", "must be at least 1"));
    }
    if !(raw.side_channel_bits.is_finite() && raw.side_channel_bits >= 0.0) {
        return Err(invalid("side_channel_bits", "must be finite and >= 0"));
    }
    let learning_rate = match (raw.lr_schedule, raw.learning_rate) {
        (Schedule::Constant, None) => {
            return Err(invalid(
                "learning_rate",
                "required for the constant schedule",
            ))
        }
        (Schedule::Constant, Some(eta)) => Some(positive("learning_rate", eta)?),
        (Schedule::InverseT, Some(_)) => {
            return Err(invalid(
                "learning_rate",
                "the inverse-t schedule derives its rate from the data",
            ))
        }
        (Schedule::InverseT, None) => None,
    };
    if raw.lr_schedule == Schedule::InverseT && raw.loss != LossKind::Quadratic && raw.ridge == 0.0
    {
        return Err(invalid(
            "lr_schedule",
            "inverse-t needs a strongly convex objective: quadratic loss or ridge > 0",
        ));
    }
    let init = match raw.init {
        InitKind::Zeros => Init::Zeros,
        InitKind::Gaussian => Init::Gaussian {
            std: positive("init_std", raw.init_std)?,
        },
    };
    if let Some(l) = raw.gradient_bound {
        positive("gradient_bound", l)?;
    }
    if let Some(r) = raw.domain_radius {
        positive("domain_radius", r)?;
    }

    let scale_factors = raw
        .scale_factors
        .clone()
        .unwrap_or_else(|| vec![1.0; users]);
    if scale_factors.len() != users {
        return Err(invalid(
            "scale_factors",
            format!("{} entries for {users} users", scale_factors.len()),
        ));
    }
    if scale_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(invalid("scale_factors", "entries must be finite and > 0"));
    }
    let label_sets = match raw.label_sets.clone() {
        None => vec![
            (0..classes as u32).collect();
            if raw.loss == LossKind::Softmax {
                users
            } else {
                0
            }
        ],
        Some(_) if raw.loss != LossKind::Softmax => {
            return Err(invalid("label_sets", "only used with the softmax loss"))
        }
        Some(sets) => {
            if sets.len() != users {
                return Err(invalid(
                    "label_sets",
                    format!("{} sets for {users} users", sets.len()),
                ));
            }
            if let Some(bad) = sets
                .iter()
                .find(|s| s.is_empty() || s.iter().any(|&c| c as usize >= classes))
            {
                return Err(invalid(
                    "label_sets",
                    format!("{bad:?} must be non-empty with labels below {classes}"),
                ));
            }
            sets
        }
    };
    if let Some(n) = &raw.samples_per_user {
        if n.len() != users {
            return Err(invalid(
                "samples_per_user",
                format!("{} entries for {users} users", n.len()),
            ));
        }
        if n.contains(&0) {
            return Err(invalid("samples_per_user", "entries must be at least 1"));
        }
    }
    if !(raw.noise.is_finite() && raw.noise >= 0.0) {
        return Err(invalid("noise", "must be finite and >= 0"));
    }

    let resolve = |field: &'static str, p: &PathBuf| -> Result<PathBuf, ConfigError> {
        let full = if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        };
        if full.is_file() {
            Ok(full)
        } else {
            Err(ConfigError::MissingFile { field, path: full })
        }
    };
    let data = match raw.dataset {
        DatasetKind::Synthetic => {
            for (field, set) in [
                ("mnist_images", raw.mnist_images.is_some()),
                ("mnist_labels", raw.mnist_labels.is_some()),
                ("mnist_test_images", raw.mnist_test_images.is_some()),
                ("mnist_test_labels", raw.mnist_test_labels.is_some()),
            ] {
                if set {
                    return Err(invalid(field, "only used with `dataset = \"mnist\"`"));
                }
            }
            DatasetDescriptor::Synthetic {
                samples_per_user: raw
                    .samples_per_user
                    .clone()
                    .unwrap_or_else(|| vec![DEFAULT_SAMPLES_PER_USER; users]),
                noise: raw.noise,
                test_samples: raw.test_samples,
            }
        }
        DatasetKind::Mnist => {
            let images = raw
                .mnist_images
                .as_ref()
                .ok_or_else(|| invalid("mnist_images", "required for MNIST"))?;
            let labels = raw
                .mnist_labels
                .as_ref()
                .ok_or_else(|| invalid("mnist_labels", "required for MNIST"))?;
            let test = match (&raw.mnist_test_images, &raw.mnist_test_labels) {
                (Some(i), Some(l)) => Some((
                    resolve("mnist_test_images", i)?,
                    resolve("mnist_test_labels", l)?,
                )),
                (None, None) => None,
                _ => {
                    return Err(invalid(
                        "mnist_test_images",
                        "set both test files or neither",
                    ))
                }
            };
            DatasetDescriptor::Mnist(MnistFiles {
                images: resolve("mnist_images", images)?,
                labels: resolve("mnist_labels", labels)?,
                test,
                samples_per_user: raw.samples_per_user.clone(),
            })
        }
    };

    Ok(ExperimentConfig {
        mac,
        loss,
        features,
        policy: raw.policy,
        iterations: raw.iterations,
        seed: raw.seed,
        data_seed: raw.data_seed.unwrap_or(raw.seed),
        schedule: raw.lr_schedule,
        learning_rate,
        init,
        eval_every: raw.eval_every,
        topq_scalar_bits: raw.topq_scalar_bits,
        side_channel_bits: raw.side_channel_bits,
        gradient_bound: raw.gradient_bound,
        domain_radius: raw.domain_radius,
        scale_factors,
        label_sets,
        data,
        out_dir: raw
            .out_dir
            .map(|p| if p.is_absolute() { p } else { base.join(p) }),
        source: text.to_string(),
    })
}
