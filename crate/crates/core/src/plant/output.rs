//! Run output directory: headered CSV logs plus a JSON manifest.
//!
//! Floats are written in shortest round-trip form, so reading a directory
//! back yields bit-identical records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    BuildingRecord, MetricsTable, NoiseRecord, RoundPhase, RoundRecord, RunMeta, SimResult, SocRecord, StepRecord,
};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {detail}")]
    Inconsistent { path: PathBuf, detail: String },
}

pub const MANIFEST: &str = "run.json";
pub const SLACK: &str = "slack_profile.csv";
pub const BAND: &str = "band.csv";
pub const BUILDINGS: &str = "buildings.csv";
pub const SOC: &str = "soc.csv";
pub const ITERATIONS: &str = "iterations.csv";
pub const NOISE: &str = "noise.csv";
pub const METRICS: &str = "metrics.csv";

#[derive(Debug, Serialize, Deserialize)]
struct SlackRow {
    step: usize,
    day: usize,
    hour: usize,
    scheduled_kw: f64,
    realized_kw: f64,
    global_excess_kw: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BandRow {
    step: usize,
    committed_kw: Option<f64>,
    lower_kw: Option<f64>,
    upper_kw: Option<f64>,
    violation_kw: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildingRow {
    step: usize,
    bus: u32,
    temperature_c: f64,
    net_load_kw: f64,
    opex_chf: f64,
    discomfort_kh: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SocRow {
    step: usize,
    bus: u32,
    device: usize,
    kind: String,
    soc_kwh: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IterationRow {
    step: usize,
    phase: RoundPhase,
    iterations: usize,
    converged: bool,
    final_change_kw: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseRow {
    step: usize,
    bus: u32,
    base_load_error_kw: f64,
    irradiance_error_kw_m2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricRow {
    metric: String,
    value: f64,
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let path = dir.join(name);
    let csv_err = |source| OutputError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })
}

fn read_csv<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<T>, OutputError> {
    let path = dir.join(name);
    let csv_err = |source| OutputError::Csv {
        path: path.clone(),
        source,
    };
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

/// Write every log of `result`, and `metrics` when given, into `dir`.
pub fn write_output_dir(dir: &Path, result: &SimResult, metrics: Option<&MetricsTable>) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&result.meta).map_err(|source| OutputError::Json {
        path: manifest.clone(),
        source,
    })?;
    fs::write(&manifest, text + "\n").map_err(|source| OutputError::Io { path: manifest, source })?;

    let hw = result.meta.config.half_width;
    write_csv(
        dir,
        SLACK,
        result.steps.iter().map(|s| SlackRow {
            step: s.step,
            day: s.step / 24,
            hour: s.step % 24,
            scheduled_kw: s.scheduled,
            realized_kw: s.realized,
            global_excess_kw: s.global_excess,
        }),
    )?;
    write_csv(
        dir,
        BAND,
        result.steps.iter().map(|s| BandRow {
            step: s.step,
            committed_kw: s.committed,
            lower_kw: s.committed.map(|c| c - hw),
            upper_kw: s.committed.map(|c| c + hw),
            violation_kw: s.violation,
        }),
    )?;
    write_csv(
        dir,
        BUILDINGS,
        result.buildings.iter().map(|b| BuildingRow {
            step: b.step,
            bus: b.bus,
            temperature_c: b.temperature,
            net_load_kw: b.net_load,
            opex_chf: b.opex,
            discomfort_kh: b.discomfort,
        }),
    )?;
    write_csv(
        dir,
        SOC,
        result.storage.iter().map(|s| SocRow {
            step: s.step,
            bus: s.bus,
            device: s.device,
            kind: s.kind.clone(),
            soc_kwh: s.soc,
        }),
    )?;
    write_csv(
        dir,
        ITERATIONS,
        result.rounds.iter().map(|r| IterationRow {
            step: r.step,
            phase: r.phase,
            iterations: r.iterations,
            converged: r.converged,
            final_change_kw: r.final_change,
        }),
    )?;
    write_csv(
        dir,
        NOISE,
        result.noise.iter().map(|n| NoiseRow {
            step: n.step,
            bus: n.bus,
            base_load_error_kw: n.base_load_error,
            irradiance_error_kw_m2: n.irradiance_error,
        }),
    )?;
    if let Some(m) = metrics {
        write_metrics(dir, &m.rows())?;
    }
    Ok(())
}

/// `metric,value` rows as CSV text, exactly as [`write_metrics`] stores them.
pub fn format_metrics<S: AsRef<str>>(rows: &[(S, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (k, v) in rows {
        w.serialize(MetricRow {
            metric: k.as_ref().to_string(),
            value: *v,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Write `metric,value` rows, replacing any existing `metrics.csv`.
pub fn write_metrics<S: AsRef<str>>(dir: &Path, rows: &[(S, f64)]) -> Result<(), OutputError> {
    let path = dir.join(METRICS);
    fs::write(&path, format_metrics(rows)).map_err(|source| OutputError::Io { path, source })
}

pub fn read_metrics(dir: &Path) -> Result<Vec<(String, f64)>, OutputError> {
    Ok(read_csv::<MetricRow>(dir, METRICS)?
        .into_iter()
        .map(|r| (r.metric, r.value))
        .collect())
}

/// Rebuild a [`SimResult`] from a directory written by [`write_output_dir`].
pub fn read_output_dir(dir: &Path) -> Result<SimResult, OutputError> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|source| OutputError::Io {
        path: manifest.clone(),
        source,
    })?;
    let meta: RunMeta = serde_json::from_str(&text).map_err(|source| OutputError::Json { path: manifest, source })?;

    let slack: Vec<SlackRow> = read_csv(dir, SLACK)?;
    let band: Vec<BandRow> = read_csv(dir, BAND)?;
    if slack.len() != band.len() || slack.iter().zip(&band).any(|(s, b)| s.step != b.step) {
        return Err(OutputError::Inconsistent {
            path: dir.join(BAND),
            detail: format!("steps do not line up with {SLACK}"),
        });
    }
    let steps = slack
        .iter()
        .zip(&band)
        .map(|(s, b)| StepRecord {
            step: s.step,
            scheduled: s.scheduled_kw,
            realized: s.realized_kw,
            committed: b.committed_kw,
            violation: b.violation_kw,
            global_excess: s.global_excess_kw,
        })
        .collect();
    let buildings = read_csv::<BuildingRow>(dir, BUILDINGS)?
        .into_iter()
        .map(|b| BuildingRecord {
            step: b.step,
            bus: b.bus,
            temperature: b.temperature_c,
            net_load: b.net_load_kw,
            opex: b.opex_chf,
            discomfort: b.discomfort_kh,
        })
        .collect();
    let storage = read_csv::<SocRow>(dir, SOC)?
        .into_iter()
        .map(|s| SocRecord {
            step: s.step,
            bus: s.bus,
            device: s.device,
            kind: s.kind,
            soc: s.soc_kwh,
        })
        .collect();
    let rounds = read_csv::<IterationRow>(dir, ITERATIONS)?
        .into_iter()
        .map(|r| RoundRecord {
            step: r.step,
            phase: r.phase,
            iterations: r.iterations,
            converged: r.converged,
            final_change: r.final_change_kw,
        })
        .collect();
    let noise = read_csv::<NoiseRow>(dir, NOISE)?
        .into_iter()
        .map(|n| NoiseRecord {
            step: n.step,
            bus: n.bus,
            base_load_error: n.base_load_error_kw,
            irradiance_error: n.irradiance_error_kw_m2,
        })
        .collect();
    Ok(SimResult {
        meta,
        steps,
        buildings,
        storage,
        rounds,
        noise,
    })
}
