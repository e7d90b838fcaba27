use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::harness::{train, Example, PreparedData, StepInfo, TrainOptions, TrainOutcome};
use crate::operators::OperatorModel;
use crate::{Error, Result};

use super::gradients::{gradient_ratio, GradientReport};
use super::probe::{train_probe, ProbeConfig};
use super::spectrum::{mean_profile, SpectralProfile};

/// Probe error and spectrum for each hidden representation `V_0..V_{L-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgettingReport {
    /// `lifting`, `L0`, …, `L{L-2}`
    pub labels: Vec<String>,
    pub eps: Vec<f64>,
    pub spectra: Vec<SpectralProfile>,
}

impl ForgettingReport {
    pub fn eps_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.eps[i])
    }
}

pub fn representation_label(index: usize) -> String {
    if index == 0 {
        "lifting".into()
    } else {
        format!("L{}", index - 1)
    }
}

/// Detached `V_0..V_{L-1}` for every example, grouped by representation.
pub fn capture_representations(
    model: &OperatorModel,
    examples: &[Example],
) -> Result<Vec<Vec<Tensor<f32>>>> {
    let depth = model.config().layers;
    let mut fields = vec![Vec::with_capacity(examples.len()); depth];
    for ex in examples {
        let (_, acts) = model.capture(&ex.input)?;
        for (slot, v) in fields.iter_mut().zip(acts) {
            slot.push(v);
        }
    }
    Ok(fields)
}

/// Trains one probe per representation on the `probe` examples.
pub fn run_forgetting_study(
    model: &OperatorModel,
    probe: &[Example],
    config: &ProbeConfig,
) -> Result<ForgettingReport> {
    if probe.is_empty() {
        return Err(Error::Contract("forgetting study needs probe examples".into()));
    }
    let masks: Vec<Tensor<f32>> = probe.iter().map(|e| e.mask.clone()).collect();
    let mut report = ForgettingReport {
        labels: Vec::new(),
        eps: Vec::new(),
        spectra: Vec::new(),
    };
    for (l, fields) in capture_representations(model, probe)?.into_iter().enumerate() {
        let outcome = train_probe(&fields, &masks, config)?;
        report.labels.push(representation_label(l));
        report.eps.push(outcome.eps);
        report.spectra.push(mean_profile(&fields)?);
    }
    Ok(report)
}

/// Spectra of `V_0..V_{L-1}` without probe training.
pub fn run_spectra(model: &OperatorModel, examples: &[Example]) -> Result<Vec<SpectralProfile>> {
    capture_representations(model, examples)?
        .iter()
        .map(|f| mean_profile(f))
        .collect()
}

pub struct ShortcutReport {
    pub reports: Vec<GradientReport>,
    /// mean `R_l` over the final quarter of the logged steps
    pub final_quarter: Vec<f64>,
    pub final_quarter_encoder: f64,
    pub outcome: TrainOutcome,
}

/// Trains `model` while logging gradient ratios every `every` steps.
pub fn run_shortcut_study(
    model: OperatorModel,
    data: &PreparedData,
    options: &TrainOptions,
    every: usize,
) -> Result<ShortcutReport> {
    if every == 0 {
        return Err(Error::Config("gradient logging interval must be positive".into()));
    }
    let layers = model.config().layers;
    let mut reports = Vec::new();
    let mut observe = |info: &StepInfo| -> Result<()> {
        if info.step % every == 0 {
            reports.push(gradient_ratio(info.model.params(), layers, info.gradients, info.step)?);
        }
        Ok(())
    };
    let outcome = train(model, data, options, Some(&mut observe))?;
    let tail = &reports[reports.len() - reports.len().div_ceil(4)..];
    let n = tail.len() as f64;
    let final_quarter = (0..layers)
        .map(|l| tail.iter().map(|r| r.ratios[l]).sum::<f64>() / n)
        .collect();
    let final_quarter_encoder = tail.iter().map(|r| r.encoder).sum::<f64>() / n;
    Ok(ShortcutReport {
        reports,
        final_quarter,
        final_quarter_encoder,
        outcome,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn probe_csv(report: &ForgettingReport) -> String {
    let mut out = String::from("layer,eps\n");
    for (label, eps) in report.labels.iter().zip(&report.eps) {
        let _ = writeln!(out, "{label},{eps}");
    }
    out
}

pub fn spectrum_csv(profile: &SpectralProfile) -> String {
    let mut out = String::from("kappa,rho\n");
    for (k, rho) in profile.rho.iter().enumerate() {
        let _ = writeln!(out, "{k},{rho}");
    }
    out
}

pub fn gradient_csv(reports: &[GradientReport]) -> String {
    let layers = reports.first().map_or(0, |r| r.ratios.len());
    let mut out = String::from("step");
    for l in 0..layers {
        let _ = write!(out, ",R_{l}");
    }
    out += ",R_encoder\n";
    for r in reports {
        let _ = write!(out, "{}", r.step);
        for x in &r.ratios {
            let _ = write!(out, ",{x}");
        }
        let _ = writeln!(out, ",{}", r.encoder);
    }
    out
}

pub const PROBE_FILE: &str = "probe_mse.csv";
pub const GRADIENT_FILE: &str = "grad_ratios.csv";

/// Writes `probe_mse.csv` and `spectra_layer{l}.csv` into `dir`.
pub fn write_forgetting(dir: &Path, report: &ForgettingReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(PROBE_FILE), &probe_csv(report))?;
    write_spectra(dir, &report.spectra)
}

pub fn write_spectra(dir: &Path, spectra: &[SpectralProfile]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (l, s) in spectra.iter().enumerate() {
        write_file(&dir.join(format!("spectra_layer{l}.csv")), &spectrum_csv(s))?;
    }
    Ok(())
}

pub fn write_gradients(dir: &Path, reports: &[GradientReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(GRADIENT_FILE), &gradient_csv(reports))
}
