use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::hex_digest;
use crate::diagnostics::{GRADIENT_FILE, PROBE_FILE};
use crate::{Error, Result};

use super::run::{RunSummary, CONFIG_FILE, RUN_ARTIFACTS, SUMMARY_FILE};

/// Relative improvement of `with_memory` over `without`, in percent.
pub fn gain_percent(without: f64, with_memory: f64) -> f64 {
    (without - with_memory) / without * 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportEntry {
    pub run: String,
    #[serde(flatten)]
    pub summary: RunSummary,
    /// against the no-memory run with the same backbone and seed
    pub gain_percent: Option<f64>,
    /// sha256 of the run's `config.txt`
    pub config_sha256: String,
    pub diagnostics: Diagnostics,
}

/// Diagnostics written next to a run, when present.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `(representation, eps)` rows of `probe_mse.csv`
    pub probe_mse: Vec<(String, f64)>,
    /// last logged row of `grad_ratios.csv`: step, then R_0.. and R_encoder
    pub final_gradient_ratios: Option<(u64, Vec<f64>)>,
}

fn csv_rows(path: &Path) -> Result<Option<Vec<Vec<String>>>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect(),
    ))
}

fn number<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format {
        offset: 0,
        detail: format!("{}: bad number {field:?}", path.display()),
    })
}

fn read_diagnostics(dir: &Path) -> Result<Diagnostics> {
    let mut out = Diagnostics::default();
    let path = dir.join(PROBE_FILE);
    for row in csv_rows(&path)?.unwrap_or_default() {
        if row.len() != 2 {
            return Err(Error::Format {
                offset: 0,
                detail: format!("{}: expected layer,eps", path.display()),
            });
        }
        out.probe_mse.push((row[0].clone(), number(&path, &row[1])?));
    }
    let path = dir.join(GRADIENT_FILE);
    if let Some(last) = csv_rows(&path)?.and_then(|rows| rows.last().cloned()) {
        let step = number(&path, &last[0])?;
        let ratios = last[1..]
            .iter()
            .map(|f| number(&path, f))
            .collect::<Result<Vec<f64>>>()?;
        out.final_gradient_ratios = Some((step, ratios));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub runs: Vec<ReportEntry>,
    /// `run/file` paths expected but not found
    pub missing: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("run,backbone,injection,policy,encoder,seed,test_rel_l2,gain_percent,config_sha256\n");
        for e in &self.runs {
            let s = &e.summary;
            let gain = e.gain_percent.map(|g| format!("{g:.2}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.run,
                s.backbone,
                s.injection,
                s.policy,
                s.encoder,
                s.seed,
                s.test_rel_l2,
                gain,
                e.config_sha256
            );
        }
        for m in &self.missing {
            let _ = writeln!(out, "# missing {m}");
        }
        out
    }
}

/// Collects every run directory directly under `root`, in name order.
///
/// A subdirectory holding any run artifact counts as a run; the artifacts
/// it lacks are listed in `missing` and runs without a summary are left
/// out of the table.
pub fn build_report(root: &Path) -> Result<Report> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for name in dirs {
        let dir = root.join(&name);
        let present: Vec<bool> = RUN_ARTIFACTS.iter().map(|f| dir.join(f).is_file()).collect();
        if !present.iter().any(|&p| p) {
            continue;
        }
        for (f, &p) in RUN_ARTIFACTS.iter().zip(&present) {
            if !p {
                missing.push(format!("{name}/{f}"));
            }
        }
        let path = dir.join(SUMMARY_FILE);
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let summary: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: e.column() as u64,
            detail: format!("{}: {e}", path.display()),
        })?;
        let config_path = dir.join(CONFIG_FILE);
        let config_sha256 = match std::fs::read(&config_path) {
            Ok(bytes) => hex_digest(&bytes),
            Err(_) => String::new(),
        };
        runs.push(ReportEntry {
            run: name,
            summary,
            gain_percent: None,
            config_sha256,
            diagnostics: read_diagnostics(&dir)?,
        });
    }
    let baselines: Vec<(String, u64, f64)> = runs
        .iter()
        .filter(|e| e.summary.injection == "none")
        .map(|e| (e.summary.backbone.clone(), e.summary.seed, e.summary.test_rel_l2))
        .collect();
    for e in runs.iter_mut().filter(|e| e.summary.injection != "none") {
        e.gain_percent = baselines
            .iter()
            .find(|(b, s, _)| *b == e.summary.backbone && *s == e.summary.seed)
            .map(|(_, _, none)| gain_percent(*none, e.summary.test_rel_l2));
    }
    Ok(Report { runs, missing })
}

/// Builds the report for `root` and writes `report.json` and `report.csv`
/// next to the runs.
pub fn write_report(root: &Path) -> Result<Report> {
    let report = build_report(root)?;
    for (file, text) in [("report.json", report.to_json()), ("report.csv", report.to_csv())] {
        let path = root.join(file);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
