use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetFile;
use crate::operators::{write_checkpoint, EncoderKind, InjectionKind, OperatorModel, PolicyName};
use crate::{Error, Result};

use super::config::ExperimentConfig;
use super::metrics::{check_records, metrics_csv};
use super::train::{prepare, train, PreparedData, TrainOptions, TrainOutcome};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.gfmc";
pub const RUN_ARTIFACTS: [&str; 4] = [CONFIG_FILE, METRICS_FILE, SUMMARY_FILE, CHECKPOINT_FILE];

/// Deterministic outcome of one run; wall-clock time stays in the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub backbone: String,
    pub injection: String,
    pub policy: String,
    pub encoder: String,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_rel_l2: f64,
    pub final_train_loss: f64,
    pub test_rel_l2: f64,
    pub dataset_sha256: String,
}

impl RunSummary {
    pub fn new(config: &ExperimentConfig, outcome: &TrainOutcome, dataset_hash: &str) -> Self {
        let best = &outcome.metrics[outcome.best_epoch - 1];
        Self {
            backbone: config.backbone.to_string(),
            injection: config.injection.to_string(),
            policy: config.policy.to_string(),
            encoder: config.encoder.to_string(),
            seed: config.seed,
            epochs: config.epochs,
            best_epoch: outcome.best_epoch,
            best_val_rel_l2: best.val_rel_l2,
            final_train_loss: outcome.metrics.last().unwrap().train_loss,
            test_rel_l2: outcome.test_rel_l2,
            dataset_sha256: dataset_hash.to_string(),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn options(config: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        seed: config.seed,
    }
}

/// Trains one configuration and writes its artifacts into `config.output`.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &PreparedData,
    dataset_hash: &str,
) -> Result<(TrainOutcome, RunSummary)> {
    config.validate()?;
    let model = OperatorModel::new(config.model()?)?;
    let outcome = train(model, data, &options(config), None)?;
    check_records(&outcome.metrics)?;
    let summary = RunSummary::new(config, &outcome, dataset_hash);
    let dir = &config.output;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.save(&dir.join(CONFIG_FILE))?;
    write(&dir.join(METRICS_FILE), &metrics_csv(&outcome.metrics))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&dir.join(SUMMARY_FILE), &(json + "\n"))?;
    write_checkpoint(&outcome.model, &dir.join(CHECKPOINT_FILE))?;
    Ok((outcome, summary))
}

/// Reads and splits the dataset named by `config`, returning it with its hash.
pub fn load_data(config: &ExperimentConfig) -> Result<(PreparedData, String)> {
    let file = crate::data::read_dataset(&config.dataset)?;
    prepared_with_hash(&file, config)
}

pub fn prepared_with_hash(
    file: &DatasetFile,
    config: &ExperimentConfig,
) -> Result<(PreparedData, String)> {
    Ok((prepare(file, &config.split())?, file.content_hash()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Policy,
    Injection,
    Encoder,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(Self::Policy),
            "injection" | "injection_kind" => Ok(Self::Injection),
            "encoder" => Ok(Self::Encoder),
            _ => Err(Error::Config(format!("unknown matrix axis {s:?}"))),
        }
    }
}

/// Labelled configurations along one axis, derived from `base`.
///
/// Memory rows fall back to film injection and the conv encoder when `base`
/// has none; the injection and encoder axes use full injection when `base`
/// has no policy.
pub fn matrix_configs(base: &ExperimentConfig, axis: Axis) -> Vec<(String, ExperimentConfig)> {
    let injection = match base.injection {
        InjectionKind::None => InjectionKind::Film,
        k => k,
    };
    let encoder = match base.encoder {
        EncoderKind::None => EncoderKind::Conv,
        e => e,
    };
    let policy = match base.policy {
        PolicyName::None => PolicyName::Full,
        p => p,
    };
    let with = |label: String, inj: InjectionKind, pol: PolicyName, enc: EncoderKind| {
        let mut c = base.clone();
        c.injection = inj;
        c.policy = pol;
        c.encoder = enc;
        c.output = base.output.join(&label);
        (label, c)
    };
    match axis {
        Axis::Policy => {
            let mut rows = vec![with(
                "none".into(),
                InjectionKind::None,
                PolicyName::None,
                EncoderKind::None,
            )];
            let mut policies: Vec<PolicyName> = (0..base.layers).map(PolicyName::Single).collect();
            policies.extend([PolicyName::Early, PolicyName::Late, PolicyName::Full]);
            for p in policies {
                rows.push(with(p.to_string(), injection, p, encoder));
            }
            rows
        }
        Axis::Injection => [InjectionKind::Film, InjectionKind::Additive, InjectionKind::Concat]
            .into_iter()
            .map(|k| with(k.to_string(), k, policy, encoder))
            .collect(),
        Axis::Encoder => [EncoderKind::Conv, EncoderKind::BranchTrunk]
            .into_iter()
            .map(|e| with(e.to_string(), injection, policy, e))
            .collect(),
    }
}

pub struct MatrixRow {
    pub label: String,
    pub config: ExperimentConfig,
    /// the failure message when the run did not complete
    pub result: std::result::Result<RunSummary, String>,
}

pub struct MatrixResult {
    pub dataset_hash: String,
    pub rows: Vec<MatrixRow>,
}

impl MatrixResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# dataset_sha256 = {}\n", self.dataset_hash);
        out += "label,backbone,injection,policy,encoder,seed,test_rel_l2,best_val_rel_l2,best_epoch,status\n";
        for row in &self.rows {
            let c = &row.config;
            let _ = write!(
                out,
                "{},{},{},{},{},{},",
                row.label, c.backbone, c.injection, c.policy, c.encoder, c.seed
            );
            match &row.result {
                Ok(s) => {
                    let _ = writeln!(out, "{},{},{},ok", s.test_rel_l2, s.best_val_rel_l2, s.best_epoch);
                }
                Err(msg) => {
                    let _ = writeln!(out, ",,,failed: {}", msg.replace([',', '\n'], ";"));
                }
            }
        }
        out
    }
}

/// Runs every configuration along `axis`; a failed run is recorded and the
/// remaining runs still execute. Writes `matrix.csv` under `base.output`.
pub fn run_matrix(
    base: &ExperimentConfig,
    axis: Axis,
    data: &PreparedData,
    dataset_hash: &str,
) -> Result<MatrixResult> {
    base.validate()?;
    let configs = matrix_configs(base, axis);
    for (_, c) in &configs {
        c.validate()?;
    }
    let rows = configs
        .into_iter()
        .map(|(label, config)| {
            let result = run_experiment(&config, data, dataset_hash)
                .map(|(_, s)| s)
                .map_err(|e| e.to_string());
            MatrixRow {
                label,
                config,
                result,
            }
        })
        .collect();
    let result = MatrixResult {
        dataset_hash: dataset_hash.to_string(),
        rows,
    };
    std::fs::create_dir_all(&base.output).map_err(|e| Error::io(&base.output, e))?;
    write(&base.output.join("matrix.csv"), &result.to_csv())?;
    Ok(result)
}
