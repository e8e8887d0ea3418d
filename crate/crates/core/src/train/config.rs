use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskFlags;
use crate::retrieval::DEFAULT_TEMPERATURE;

/// Validation quantity used to pick the best epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// R@1 + ROUGE-L + region F1, over whichever are reported.
    Composite,
    RAt1,
    RougeL,
    F1,
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "composite" => SelectionMetric::Composite,
            "r_at_1" | "r@1" => SelectionMetric::RAt1,
            "rouge_l" => SelectionMetric::RougeL,
            "f1" => SelectionMetric::F1,
            other => return Err(Error::InvalidArgument(format!("unknown selection metric {other:?}"))),
        })
    }
}

impl SelectionMetric {
    fn as_str(self) -> &'static str {
        match self {
            SelectionMetric::Composite => "composite",
            SelectionMetric::RAt1 => "r_at_1",
            SelectionMetric::RougeL => "rouge_l",
            SelectionMetric::F1 => "f1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
    pub tasks: TaskFlags,
    /// `tiny` or `base`.
    pub profile: String,
    pub checkpoint_dir: PathBuf,
    pub selection_metric: SelectionMetric,
    /// Stops training after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Learned subword pieces requested from the vocabulary builder.
    pub vocab_size: usize,
    /// Blocks region-selector gradients from reaching the encoder.
    pub detach_selector: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 3e-5,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            tasks: TaskFlags::ALL,
            profile: "tiny".into(),
            checkpoint_dir: PathBuf::from("checkpoints"),
            selection_metric: SelectionMetric::Composite,
            max_steps: None,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            vocab_size: 1000,
            detach_selector: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.tasks.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return bad("weight_decay must be ≥ 0 and adam_eps > 0");
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tasks" => self.tasks = TaskFlags::parse(value)?,
            "profile" => self.profile = value.to_string(),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "selection_metric" => self.selection_metric = value.parse()?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "detach_selector" => self.detach_selector = parse(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tasks = {}", self.tasks.label());
        let _ = writeln!(s, "profile = {}", self.profile);
        let _ = writeln!(s, "checkpoint_dir = {}", self.checkpoint_dir.display());
        let _ = writeln!(s, "selection_metric = {}", self.selection_metric.as_str());
        let _ = writeln!(s, "max_steps = {}", self.max_steps.map_or("none".to_string(), |v| v.to_string()));
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "detach_selector = {}", self.detach_selector);
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}
