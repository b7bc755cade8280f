//! Config resolution: defaults < config file < flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Bad flag values or config contents; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>, source: &str) -> anyhow::Result<()> {
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(usage(format!("unknown option `{k}` in {source}")));
        }
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    Ok(())
}

/// Returns the resolved config. Keys of `flags` and of the file must be
/// fields of `T`; null flag values are treated as unset.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, flags: &impl Serialize) -> anyhow::Result<T> {
    let Value::Object(mut base) = serde_json::to_value(defaults)? else {
        unreachable!("configs serialize to objects")
    };
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
        // A run manifest replays its resolved config.
        let v = match v {
            Value::Object(mut m) if m.contains_key("subcommand") && m.contains_key("config") => m.remove("config").unwrap(),
            other => other,
        };
        let Value::Object(layer) = v else {
            return Err(usage(format!("config {} is not a JSON object", p.display())));
        };
        overlay(&mut base, layer, &p.display().to_string())?;
    }
    if let Value::Object(layer) = serde_json::to_value(flags)? {
        overlay(&mut base, layer, "flags")?;
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| usage(format!("invalid option value: {e}")))
}

pub fn require(p: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    p.clone().ok_or_else(|| usage(format!("missing required option --{flag}")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub equation: String,
    pub preset: String,
    pub fine: Option<usize>,
    pub coarse: Option<usize>,
    pub trajectories: Option<usize>,
    pub eval_trajectories: Option<usize>,
    pub duration: Option<f64>,
    pub warmup: Option<f64>,
    pub seed: u64,
    pub scheme: Option<String>,
    pub out: Option<PathBuf>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            equation: "ns".into(),
            preset: "kolmogorov-re1000".into(),
            fine: None,
            coarse: None,
            trajectories: None,
            eval_trajectories: None,
            duration: None,
            warmup: None,
            seed: 0,
            scheme: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainFileConfig {
    pub dataset: Option<PathBuf>,
    pub mode: String,
    pub unroll: Option<usize>,
    pub bundle: Option<usize>,
    pub window: Option<usize>,
    pub hippo_order: Option<usize>,
    pub layers: Option<usize>,
    pub channels: Option<usize>,
    pub batch: Option<usize>,
    pub steps: Option<usize>,
    pub seed: u64,
    pub lr: Option<f64>,
    pub lr_warmup: Option<usize>,
    pub clip: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub scheme: String,
    pub out: Option<PathBuf>,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            dataset: None,
            mode: "tsm-hippo".into(),
            unroll: None,
            bundle: None,
            window: None,
            hippo_order: None,
            layers: None,
            channels: None,
            batch: None,
            steps: None,
            seed: 0,
            lr: None,
            lr_warmup: None,
            clip: None,
            checkpoint_every: None,
            scheme: "vanleer".into(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub trajectory: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scheme: String,
    pub start: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            trajectory: None,
            checkpoint: None,
            scheme: "vanleer".into(),
            start: None,
            steps: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub pred: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub offset: usize,
    pub threshold: f64,
    pub out: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            pred: None,
            reference: None,
            offset: 0,
            threshold: tsm_core::metrics::DEFAULT_THRESHOLD,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub trajectory: Option<PathBuf>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareConfig {
    pub dataset: Option<PathBuf>,
    pub models: Vec<String>,
    pub scheme: String,
    pub threshold: f64,
    pub max_trajectories: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            dataset: None,
            models: Vec::new(),
            scheme: "vanleer".into(),
            threshold: tsm_core::metrics::DEFAULT_THRESHOLD,
            max_trajectories: None,
            out: None,
        }
    }
}
