//! Experiment configuration: JSON file, `--set key=value` overrides and
//! validation with line-numbered messages.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use qbo_core::acquisition::{AcquisitionSpec, Family};
use qbo_core::kernel::KernelParams;
use qbo_core::optim::{OptimizerConfig, OptimizerKind};
use qbo_core::tasks::{AlphaMode, DEFAULT_FEATURES, MIN_RESTARTS};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BudgetMode {
    /// Every optimizer gets the same number of objective evaluations.
    #[default]
    EvalMatched,
    /// Gradient-based optimizers get fewer evaluations, scaled by the measured
    /// cost of a gradient evaluation relative to a value evaluation.
    TimeMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionDefaults {
    pub alpha_mode: AlphaMode,
    pub beta: f64,
    pub tau: f64,
    pub n_samples: usize,
}

impl Default for AcquisitionDefaults {
    fn default() -> Self {
        let spec = AcquisitionSpec::new(Family::Ei);
        Self { alpha_mode: AlphaMode::BestObserved, beta: spec.beta, tau: spec.tau, n_samples: spec.n_samples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub q: usize,
    pub total_evals: usize,
    pub n_tasks: usize,
    pub n_repeats: usize,
    pub families: Vec<Family>,
    pub optimizers: Vec<OptimizerKind>,
    /// A single lengthscale is shared by all `dim` inputs.
    pub kernel: KernelParams,
    pub feature_count: usize,
    /// L-BFGS restarts when estimating each task maximum.
    pub max_restarts: usize,
    pub acquisition: AcquisitionDefaults,
    pub optimizer: OptimizerConfig,
    pub budget_mode: BudgetMode,
    /// Fill `wall_time_s` with measured times; zero otherwise, which keeps
    /// results byte-reproducible.
    pub record_wall_time: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            q: 4,
            total_evals: 64,
            n_tasks: 8,
            n_repeats: 3,
            families: Family::ALL.to_vec(),
            optimizers: OptimizerKind::ALL.to_vec(),
            kernel: KernelParams::benchmark_default(1),
            feature_count: DEFAULT_FEATURES,
            max_restarts: 64,
            acquisition: AcquisitionDefaults::default(),
            optimizer: OptimizerConfig::default(),
            budget_mode: BudgetMode::EvalMatched,
            record_wall_time: false,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

/// A validation failure tied to one config key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.key, self.message)
    }
}

fn issue(key: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { key: key.into(), message: message.into() }
}

impl ExperimentConfig {
    /// The large setting: d = 8, q = 8, 256 evaluations, 16 tasks.
    pub fn full_scale(mut self) -> Self {
        self.dim = 8;
        self.q = 8;
        self.total_evals = 256;
        self.n_tasks = 16;
        self
    }

    /// Kernel parameters over `dim` inputs.
    pub fn kernel_params(&self) -> KernelParams {
        let mut k = self.kernel.clone();
        if k.lengthscales.len() == 1 {
            k.lengthscales = vec![k.lengthscales[0]; self.dim];
        }
        k
    }

    pub fn acquisition_spec(&self, family: Family) -> AcquisitionSpec {
        AcquisitionSpec::new(family)
            .with_beta(self.acquisition.beta)
            .with_tau(self.acquisition.tau)
            .with_samples(self.acquisition.n_samples)
    }

    pub fn optimizer_config(&self, kind: OptimizerKind) -> OptimizerConfig {
        self.optimizer.clone().with_kind(kind)
    }

    pub fn validate(&self) -> Result<(), ConfigIssue> {
        for (key, v) in [("dim", self.dim), ("q", self.q), ("n_tasks", self.n_tasks), ("n_repeats", self.n_repeats)] {
            if v == 0 {
                return Err(issue(key, "must be at least 1"));
            }
        }
        if self.total_evals == 0 || !self.total_evals.is_multiple_of(self.q) {
            return Err(issue(
                "total_evals",
                format!("{} is not a positive multiple of q = {}", self.total_evals, self.q),
            ));
        }
        check_distinct("families", &self.families)?;
        check_distinct("optimizers", &self.optimizers)?;
        if self.feature_count < 64 {
            return Err(issue("feature_count", "must be at least 64"));
        }
        if self.max_restarts < MIN_RESTARTS {
            return Err(issue("max_restarts", format!("must be at least {MIN_RESTARTS}")));
        }
        let ls = self.kernel.lengthscales.len();
        if ls != 1 && ls != self.dim {
            return Err(issue("kernel.lengthscales", format!("has {ls} entries; expected 1 or dim = {}", self.dim)));
        }
        self.kernel.validate().map_err(|e| issue("kernel", e.to_string()))?;
        if let AlphaMode::Fixed { value } = self.acquisition.alpha_mode {
            if !value.is_finite() {
                return Err(issue("acquisition.alpha_mode", "fixed value must be finite"));
            }
        }
        for f in Family::ALL {
            self.acquisition_spec(f).validate().map_err(|e| issue("acquisition", e.to_string()))?;
        }
        self.optimizer.validate().map_err(|e| issue("optimizer", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn check_distinct<T: Ord + fmt::Debug>(key: &str, items: &[T]) -> Result<(), ConfigIssue> {
    if items.is_empty() {
        return Err(issue(key, "must not be empty"));
    }
    if items.iter().collect::<BTreeSet<_>>().len() != items.len() {
        return Err(issue(key, format!("contains duplicates: {items:?}")));
    }
    Ok(())
}

/// 1-based line of the first occurrence of `"key"` in `text`, using the
/// last segment of a dotted key.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next()?;
    let needle = format!("\"{leaf}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Applies one `key=value` override to a config in JSON form. The key is a
/// dotted path to an existing field; the value is parsed as JSON, falling
/// back to a comma-separated list of strings for list fields and to a plain
/// string otherwise.
pub fn apply_set(config: &mut Value, assignment: &str) -> Result<String, String> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| format!("`{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let mut target = &mut *config;
    for part in key.split('.') {
        target = target
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| format!("unknown config key `{key}`"))?;
    }
    *target = match serde_json::from_str::<Value>(raw) {
        Ok(v) => v,
        Err(_) if target.is_array() => {
            Value::Array(raw.split(',').map(|s| Value::String(s.trim().to_string())).collect())
        }
        Err(_) => Value::String(raw.to_string()),
    };
    Ok(key.to_string())
}

/// Command-line sources of a configuration, applied in this order: file,
/// full-scale switch, `--set` overrides, seed and output directory.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub path: Option<PathBuf>,
    pub full_scale: bool,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

pub fn resolve(sources: &ConfigSources) -> Result<ExperimentConfig, CliError> {
    let (text, origin) = match &sources.path {
        Some(p) => (read(p)?, p.display().to_string()),
        None => (String::new(), "<defaults>".into()),
    };
    let mut config = if text.is_empty() {
        ExperimentConfig::default()
    } else {
        serde_json::from_str::<ExperimentConfig>(&text)
            .map_err(|e| CliError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?
    };
    if sources.full_scale {
        config = config.full_scale();
    }
    let mut set_keys = Vec::new();
    if !sources.sets.is_empty() {
        let mut value = serde_json::to_value(&config)?;
        for s in &sources.sets {
            set_keys.push(apply_set(&mut value, s).map_err(|e| CliError::Config(format!("--set {s}: {e}")))?);
        }
        config = serde_json::from_value(value).map_err(|e| CliError::Config(format!("--set: {e}")))?;
    }
    if let Some(seed) = sources.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &sources.output {
        config.output_dir = out.clone();
    }
    config.validate().map_err(|issue| {
        let from_set = set_keys.iter().any(|k| k == &issue.key || issue.key.starts_with(&format!("{k}.")));
        let location = match line_of(&text, &issue.key) {
            Some(line) if !from_set => format!("{origin}:{line}"),
            _ if !set_keys.is_empty() => "--set".to_string(),
            _ => origin.clone(),
        };
        CliError::Config(format!("{location}: {issue}"))
    })?;
    Ok(config)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
