//! Sectioned key=value configuration files plus flag overrides.
//!
//! Format: `[section]` headers, `key = value` lines, `#` comments, blank
//! lines ignored. Every key must belong to the known set; unknown or
//! duplicate keys fail fast with a message naming the offender. Precedence
//! is flags over file values over built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use plot_core::pipeline::{LossMode, OtMode, TrainConfig};
use serde::Serialize;

/// A configuration problem: unknown key, unparsable value, or a resolved
/// setting that fails validation. Always maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

const KNOWN_KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.n",
    "dataset.noise",
    "dataset.test_n",
    "dataset.bag_size",
    "dataset.csv",
    "dataset.label_column",
    "dataset.test_csv",
    "model.hidden",
    "train.stage1_epochs",
    "train.stage2_epochs",
    "train.minibatch_bags",
    "train.loss",
    "train.sce_alpha",
    "train.sce_beta",
    "train.mixup",
    "train.mixup_alpha",
    "train.ensemble_window",
    "train.learning_rate",
    "train.lr_halve_every",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.seed",
    "ot.lambda",
    "ot.mode",
    "ot.sinkhorn_tol",
    "ot.sinkhorn_max_iter",
];

/// Parses the text of a config file into a `section.key -> value` map.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                ConfigError(format!("line {}: unterminated section header", lineno + 1))
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError(format!(
                "line {}: expected `key = value`, got {line:?}",
                lineno + 1
            ))
        })?;
        let full = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        if !KNOWN_KEYS.contains(&full.as_str()) {
            return Err(ConfigError(format!("unknown config key: {full}")));
        }
        if map.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError(format!("duplicate config key: {full}")));
        }
    }
    Ok(map)
}

/// Where instances and bags come from.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetPlan {
    TwoMoons {
        n: usize,
        noise: f64,
        test_n: usize,
        bag_size: usize,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        test_path: Option<PathBuf>,
        bag_size: usize,
    },
}

impl DatasetPlan {
    pub fn bag_size(&self) -> usize {
        match self {
            DatasetPlan::TwoMoons { bag_size, .. } => *bag_size,
            DatasetPlan::Csv { bag_size, .. } => *bag_size,
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: DatasetPlan,
    pub train: TrainConfig,
}

/// Flag-level overrides; `None` means the flag was not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub bag_size: Option<usize>,
    pub lambda: Option<f64>,
    pub ot_mode: Option<String>,
    pub loss: Option<String>,
    pub mixup: Option<String>,
    pub stage1_epochs: Option<usize>,
    pub stage2_epochs: Option<usize>,
}

fn bad(key: &str, expected: &str, got: &str) -> ConfigError {
    ConfigError(format!("{key}: expected {expected}, got {got:?}"))
}

fn get_usize(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize, ConfigError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| bad(key, "a non-negative integer", v)),
    }
}

fn get_u64(map: &BTreeMap<String, String>, key: &str, default: u64) -> Result<u64, ConfigError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<u64>()
            .map_err(|_| bad(key, "a non-negative integer", v)),
    }
}

fn get_f64(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, ConfigError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse::<f64>().map_err(|_| bad(key, "a real number", v)),
    }
}

pub fn parse_ot_mode(value: &str) -> Result<OtMode, ConfigError> {
    match value {
        "soft" => Ok(OtMode::Soft),
        "hard" => Ok(OtMode::Hard),
        "hard-exact" => Ok(OtMode::HardExact),
        "none" => Ok(OtMode::None),
        other => Err(bad(
            "ot.mode",
            "one of soft | hard | hard-exact | none",
            other,
        )),
    }
}

pub fn parse_loss(value: &str) -> Result<LossMode, ConfigError> {
    match value {
        "ce" => Ok(LossMode::Ce),
        "sce" => Ok(LossMode::Sce),
        other => Err(bad("train.loss", "one of ce | sce", other)),
    }
}

pub fn parse_on_off(key: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(bad(key, "on or off", other)),
    }
}

fn parse_hidden(value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| bad("model.hidden", "comma-separated positive widths", part))
        })
        .collect()
}

/// Applies file values and flag overrides on top of the built-in defaults
/// and validates the result. The returned config is ready to run.
pub fn resolve(
    map: &BTreeMap<String, String>,
    over: &Overrides,
) -> Result<Resolved, ConfigError> {
    let mut train = TrainConfig::default();

    if let Some(v) = map.get("model.hidden") {
        train.hidden_dims = parse_hidden(v)?;
    }
    train.stage1_epochs = get_usize(map, "train.stage1_epochs", train.stage1_epochs)?;
    train.stage2_epochs = get_usize(map, "train.stage2_epochs", train.stage2_epochs)?;
    train.minibatch_bags = get_usize(map, "train.minibatch_bags", train.minibatch_bags)?;
    if let Some(v) = map.get("train.loss") {
        train.loss_mode = parse_loss(v)?;
    }
    train.sce_alpha = get_f64(map, "train.sce_alpha", train.sce_alpha)?;
    train.sce_beta = get_f64(map, "train.sce_beta", train.sce_beta)?;
    if let Some(v) = map.get("train.mixup") {
        train.use_mixup = parse_on_off("train.mixup", v)?;
    }
    train.mixup_alpha = get_f64(map, "train.mixup_alpha", train.mixup_alpha)?;
    train.ensemble_window = get_usize(map, "train.ensemble_window", train.ensemble_window)?;
    train.learning_rate = get_f64(map, "train.learning_rate", train.learning_rate)?;
    train.lr_halve_every = get_usize(map, "train.lr_halve_every", train.lr_halve_every)?;
    train.adam_beta1 = get_f64(map, "train.adam_beta1", train.adam_beta1)?;
    train.adam_beta2 = get_f64(map, "train.adam_beta2", train.adam_beta2)?;
    train.seed = get_u64(map, "train.seed", train.seed)?;
    train.lambda = get_f64(map, "ot.lambda", train.lambda)?;
    if let Some(v) = map.get("ot.mode") {
        train.ot_mode = parse_ot_mode(v)?;
    }
    train.sinkhorn_tol = get_f64(map, "ot.sinkhorn_tol", train.sinkhorn_tol)?;
    train.sinkhorn_max_iter =
        get_usize(map, "ot.sinkhorn_max_iter", train.sinkhorn_max_iter)?;

    if let Some(seed) = over.seed {
        train.seed = seed;
    }
    if let Some(lambda) = over.lambda {
        train.lambda = lambda;
    }
    if let Some(mode) = &over.ot_mode {
        train.ot_mode = parse_ot_mode(mode)?;
    }
    if let Some(loss) = &over.loss {
        train.loss_mode = parse_loss(loss)?;
    }
    if let Some(mixup) = &over.mixup {
        train.use_mixup = parse_on_off("train.mixup", mixup)?;
    }
    if let Some(epochs) = over.stage1_epochs {
        train.stage1_epochs = epochs;
    }
    if let Some(epochs) = over.stage2_epochs {
        train.stage2_epochs = epochs;
    }

    let mut bag_size = get_usize(map, "dataset.bag_size", 50)?;
    if let Some(size) = over.bag_size {
        bag_size = size;
    }
    if bag_size == 0 {
        return Err(ConfigError(
            "dataset.bag_size: must be a positive integer".into(),
        ));
    }

    let kind = map.get("dataset.kind").map(String::as_str).unwrap_or("two-moons");
    let dataset = match kind {
        "two-moons" => {
            let n = get_usize(map, "dataset.n", 2000)?;
            let noise = get_f64(map, "dataset.noise", 0.1)?;
            let test_n = get_usize(map, "dataset.test_n", 1000)?;
            if n < 2 {
                return Err(ConfigError("dataset.n: must be at least 2".into()));
            }
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(ConfigError(
                    "dataset.noise: must be a finite non-negative real".into(),
                ));
            }
            DatasetPlan::TwoMoons {
                n,
                noise,
                test_n,
                bag_size,
            }
        }
        "csv" => {
            let path = map.get("dataset.csv").ok_or_else(|| {
                ConfigError("dataset.csv: required when dataset.kind = csv".into())
            })?;
            let label_column = map
                .get("dataset.label_column")
                .cloned()
                .unwrap_or_else(|| "label".to_string());
            DatasetPlan::Csv {
                path: PathBuf::from(path),
                label_column,
                test_path: map.get("dataset.test_csv").map(PathBuf::from),
                bag_size,
            }
        }
        other => {
            return Err(bad("dataset.kind", "two-moons or csv", other));
        }
    };

    train
        .validate()
        .map_err(|e| ConfigError(format!("invalid configuration: {e}")))?;
    Ok(Resolved { dataset, train })
}

/// Serializable echo of every resolved training setting, written into the
/// run summary so artifacts are self-describing.
#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub hidden_dims: Vec<usize>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub minibatch_bags: usize,
    pub lambda: f64,
    pub ot_mode: String,
    pub loss_mode: String,
    pub sce_alpha: f64,
    pub sce_beta: f64,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub ensemble_window: usize,
    pub learning_rate: f64,
    pub lr_halve_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub num_threads: usize,
    pub seed: u64,
}

pub fn ot_mode_name(mode: OtMode) -> &'static str {
    match mode {
        OtMode::Soft => "soft",
        OtMode::Hard => "hard",
        OtMode::HardExact => "hard-exact",
        OtMode::None => "none",
    }
}

pub fn loss_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Ce => "ce",
        LossMode::Sce => "sce",
    }
}

impl ConfigEcho {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        ConfigEcho {
            hidden_dims: cfg.hidden_dims.clone(),
            stage1_epochs: cfg.stage1_epochs,
            stage2_epochs: cfg.stage2_epochs,
            minibatch_bags: cfg.minibatch_bags,
            lambda: cfg.lambda,
            ot_mode: ot_mode_name(cfg.ot_mode).to_string(),
            loss_mode: loss_name(cfg.loss_mode).to_string(),
            sce_alpha: cfg.sce_alpha,
            sce_beta: cfg.sce_beta,
            mixup: cfg.use_mixup,
            mixup_alpha: cfg.mixup_alpha,
            ensemble_window: cfg.ensemble_window,
            learning_rate: cfg.learning_rate,
            lr_halve_every: cfg.lr_halve_every,
            adam_beta1: cfg.adam_beta1,
            adam_beta2: cfg.adam_beta2,
            sinkhorn_tol: cfg.sinkhorn_tol,
            sinkhorn_max_iter: cfg.sinkhorn_max_iter,
            num_threads: cfg.num_threads,
            seed: cfg.seed,
        }
    }
}
