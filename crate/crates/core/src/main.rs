use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geoforget::data::{generate_dataset, write_dataset};
use geoforget::diagnostics::{
    run_forgetting_study, run_shortcut_study, run_spectra, write_forgetting, write_gradients,
    write_spectra, ProbeConfig,
};
use geoforget::harness::{
    load_data, options, run_experiment, run_matrix, write_report, Axis, ExperimentConfig,
    CHECKPOINT_FILE,
};
use geoforget::operators::{read_checkpoint, OperatorModel};
use geoforget::{Error, Result};

#[derive(Parser)]
#[command(name = "geoforget", version, about = "Geometry memory experiments for neural operators on Darcy flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// experiment config in `key = value` form; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// override one config key, e.g. `--set epochs=20`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// trained model; defaults to `<output>/model.gfmc`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write the dataset
    GenData(Common),
    /// Train one model and write its run directory
    Train(Common),
    /// Train layer probes on a trained model
    Probe(WithCheckpoint),
    /// Radial spectra of a trained model's hidden representations
    Spectra(WithCheckpoint),
    /// Train while logging per-layer gradient ratios
    Grads(Common),
    /// Run every configuration along one axis
    Matrix {
        #[command(flatten)]
        common: Common,
        /// policy, injection or encoder
        #[arg(long, default_value = "policy")]
        axis: String,
    },
    /// Collect run directories into report.json and report.csv
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for (i, item) in common.overrides.iter().enumerate() {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
        config.set(key.trim(), value.trim(), i + 1)?;
    }
    config.validate()?;
    Ok(config)
}

fn load_model(config: &ExperimentConfig, checkpoint: &Option<PathBuf>) -> Result<OperatorModel> {
    let path = checkpoint
        .clone()
        .unwrap_or_else(|| config.output.join(CHECKPOINT_FILE));
    read_checkpoint(&path)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(common) => {
            let config = load_config(&common)?;
            let file = generate_dataset(&config.split())?;
            if let Some(dir) = config.dataset.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_dataset(&file, &config.dataset)?;
            println!(
                "wrote {} samples at {}x{} to {} (sha256 {})",
                file.samples.len(),
                file.resolution,
                file.resolution,
                config.dataset.display(),
                file.content_hash()
            );
        }
        Command::Train(common) => {
            let config = load_config(&common)?;
            let (data, hash) = load_data(&config)?;
            let (outcome, summary) = run_experiment(&config, &data, &hash)?;
            println!(
                "best epoch {} of {}, val rel L2 {:.4e}, test rel L2 {:.4e}",
                outcome.best_epoch, config.epochs, summary.best_val_rel_l2, summary.test_rel_l2
            );
        }
        Command::Probe(args) => {
            let config = load_config(&args.common)?;
            let (data, _) = load_data(&config)?;
            let model = load_model(&config, &args.checkpoint)?;
            let probe = ProbeConfig {
                steps: config.probe_steps,
                lr: 1e-3,
                seed: config.seed,
            };
            let report = run_forgetting_study(&model, &data.test, &probe)?;
            write_forgetting(&config.output, &report)?;
            for (label, eps) in report.labels.iter().zip(&report.eps) {
                println!("{label:>8}  eps {eps:.4e}");
            }
        }
        Command::Spectra(args) => {
            let config = load_config(&args.common)?;
            let (data, _) = load_data(&config)?;
            let model = load_model(&config, &args.checkpoint)?;
            let spectra = run_spectra(&model, &data.test)?;
            write_spectra(&config.output, &spectra)?;
            println!("wrote {} spectra to {}", spectra.len(), config.output.display());
        }
        Command::Grads(common) => {
            let config = load_config(&common)?;
            let (data, _) = load_data(&config)?;
            let model = OperatorModel::new(config.model()?)?;
            let study = run_shortcut_study(model, &data, &options(&config), config.grad_every)?;
            write_gradients(&config.output, &study.reports)?;
            for (l, r) in study.final_quarter.iter().enumerate() {
                println!("R_{l} {r:.4}");
            }
            println!("R_encoder {:.4}", study.final_quarter_encoder);
        }
        Command::Matrix { common, axis } => {
            let axis: Axis = axis.parse()?;
            let config = load_config(&common)?;
            let (data, hash) = load_data(&config)?;
            let result = run_matrix(&config, axis, &data, &hash)?;
            for row in &result.rows {
                match &row.result {
                    Ok(s) => println!("{:>8}  test rel L2 {:.4e}", row.label, s.test_rel_l2),
                    Err(e) => println!("{:>8}  failed: {e}", row.label),
                }
            }
        }
        Command::Report { dir } => {
            let report = write_report(&dir)?;
            println!("{} runs, {} missing artifacts", report.runs.len(), report.missing.len());
            for m in &report.missing {
                println!("missing {m}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
