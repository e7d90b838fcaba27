use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::SplitConfig;
use crate::operators::{
    make_policy, Backbone, EncoderKind, InjectionKind, ModelConfig, PolicyName,
};
use crate::{Error, Result};

/// Everything one experiment needs, in `key = value` form on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub resolution: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub data_seed: u64,
    pub jitter: f64,
    pub backbone: Backbone,
    pub layers: usize,
    pub width: usize,
    pub modes: usize,
    pub heads: usize,
    pub poles: usize,
    pub injection: InjectionKind,
    pub policy: PolicyName,
    pub encoder: EncoderKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub probe_steps: usize,
    pub grad_every: usize,
}

pub const CONFIG_KEYS: [&str; 23] = [
    "dataset",
    "output",
    "resolution",
    "train_samples",
    "val_samples",
    "test_samples",
    "data_seed",
    "jitter",
    "backbone",
    "layers",
    "width",
    "modes",
    "heads",
    "poles",
    "injection",
    "policy",
    "encoder",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "probe_steps",
    "grad_every",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        let split = SplitConfig::default();
        let model = ModelConfig::new(Backbone::Fno, split.resolution);
        Self {
            dataset: PathBuf::from("data/darcy.gfds"),
            output: PathBuf::from("runs/default"),
            resolution: split.resolution,
            train_samples: split.train,
            val_samples: split.val,
            test_samples: split.test,
            data_seed: split.seed,
            jitter: split.jitter,
            backbone: model.backbone,
            layers: model.layers,
            width: model.width,
            modes: model.modes,
            heads: model.heads,
            poles: model.poles,
            injection: InjectionKind::None,
            policy: PolicyName::None,
            encoder: EncoderKind::None,
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            probe_steps: 300,
            grad_every: 20,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// their defaults, unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            seen.push(key);
            cfg.set(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key`/`value` pair without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            "resolution" => self.resolution = parse_value(key, value, line)?,
            "train_samples" => self.train_samples = parse_value(key, value, line)?,
            "val_samples" => self.val_samples = parse_value(key, value, line)?,
            "test_samples" => self.test_samples = parse_value(key, value, line)?,
            "data_seed" => self.data_seed = parse_value(key, value, line)?,
            "jitter" => self.jitter = parse_value(key, value, line)?,
            "backbone" => self.backbone = parse_value(key, value, line)?,
            "layers" => self.layers = parse_value(key, value, line)?,
            "width" => self.width = parse_value(key, value, line)?,
            "modes" => self.modes = parse_value(key, value, line)?,
            "heads" => self.heads = parse_value(key, value, line)?,
            "poles" => self.poles = parse_value(key, value, line)?,
            "injection" => self.injection = parse_value(key, value, line)?,
            "policy" => self.policy = parse_value(key, value, line)?,
            "encoder" => self.encoder = parse_value(key, value, line)?,
            "epochs" => self.epochs = parse_value(key, value, line)?,
            "batch_size" => self.batch_size = parse_value(key, value, line)?,
            "lr" => self.lr = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "probe_steps" => self.probe_steps = parse_value(key, value, line)?,
            "grad_every" => self.grad_every = parse_value(key, value, line)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form, one key per line in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "dataset" => self.dataset.display().to_string(),
                "output" => self.output.display().to_string(),
                "resolution" => self.resolution.to_string(),
                "train_samples" => self.train_samples.to_string(),
                "val_samples" => self.val_samples.to_string(),
                "test_samples" => self.test_samples.to_string(),
                "data_seed" => self.data_seed.to_string(),
                "jitter" => self.jitter.to_string(),
                "backbone" => self.backbone.to_string(),
                "layers" => self.layers.to_string(),
                "width" => self.width.to_string(),
                "modes" => self.modes.to_string(),
                "heads" => self.heads.to_string(),
                "poles" => self.poles.to_string(),
                "injection" => self.injection.to_string(),
                "policy" => self.policy.to_string(),
                "encoder" => self.encoder.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "lr" => self.lr.to_string(),
                "seed" => self.seed.to_string(),
                "probe_steps" => self.probe_steps.to_string(),
                "grad_every" => self.grad_every.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            train: self.train_samples,
            val: self.val_samples,
            test: self.test_samples,
            resolution: self.resolution,
            seed: self.data_seed,
            jitter: self.jitter,
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.backbone, self.resolution);
        m.layers = self.layers;
        m.width = self.width;
        m.modes = self.modes;
        m.heads = self.heads;
        m.poles = self.poles;
        m.seed = self.seed;
        m.injection = self.injection;
        m.encoder = self.encoder;
        m.policy = make_policy(self.policy, self.layers)?;
        Ok(m)
    }

    /// Checks every field; called before any data is read or model built.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() || self.output.as_os_str().is_empty() {
            return Err(Error::Config("dataset and output paths must be non-empty".into()));
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if !(0.0..=0.3).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter {} outside [0, 0.3]", self.jitter)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if self.probe_steps == 0 || self.grad_every == 0 {
            return Err(Error::Config("probe_steps and grad_every must be positive".into()));
        }
        self.model()?.validate()
    }
}
