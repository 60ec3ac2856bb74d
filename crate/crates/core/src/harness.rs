//! Command implementations behind the `beamtrack` binary.
//!
//! Every command computes first and writes files afterwards, so a failed run
//! leaves no partial output. Exit codes: 0 success, 1 runtime failure,
//! 2 configuration error.

use crate::config::{
    load_toml, read_text, ConfigError, RunFile, SweepFile, WaveSpec, DEFAULT_ASCR_TOL,
};
use crate::geometry::{OpticalConstants, SpotSample};
use crate::imaging::{save_pgm, PgmFormat};
use crate::link::RunMetrics;
use crate::sim::{LoopTrace, SimError, Simulator};
use crate::wave::{calibrate_wave, characterize, measure_ascr, AscrReport, WaveError, WaveParams};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Runtime(_) | HarnessError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => HarnessError::Config(ConfigError::Invalid(m)),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    /// Characterized ASCR of the wave (rad/s); 0 without a wave.
    pub ascr: f64,
    pub rx_speed: f64,
    pub data_rate: f64,
    pub tracking: bool,
    pub plr: f64,
    pub mean_ber: f64,
    pub throughput: f64,
    pub offset_std_x: f64,
    pub offset_std_y: f64,
}

impl MetricsRow {
    pub fn new(
        scenario: &str,
        ascr: f64,
        rx_speed: f64,
        tracking: bool,
        m: &RunMetrics,
        data_rate: f64,
    ) -> Self {
        Self {
            scenario: scenario.to_string(),
            ascr,
            rx_speed,
            data_rate,
            tracking,
            plr: m.plr,
            mean_ber: m.mean_ber,
            throughput: m.throughput,
            offset_std_x: m.offset_std_x,
            offset_std_y: m.offset_std_y,
        }
    }
}

/// One line of the per-cycle trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub blob_found: bool,
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: io::Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_trace<W: Write>(trace: &LoopTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in &trace.cycles {
        w.serialize(TraceRow {
            t: c.t,
            offset_x: c.offset.0,
            offset_y: c.offset.1,
            tilt_x: c.tilt.0,
            tilt_y: c.tilt.1,
            blob_found: c.blob_found(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv_file(
    path: &Path,
    body: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>,
) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    body(&mut buf).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    fs::write(path, buf).map_err(io_err(path))
}

fn wave_ascr(wave: &Option<WaveParams>, optics: &OpticalConstants) -> Result<f64, HarnessError> {
    match wave {
        Some(w) if w.amplitude != 0.0 || w.amplitude2 != 0.0 => Ok(characterize(w, optics)
            .map_err(|e| HarnessError::Runtime(e.to_string()))?
            .ascr),
        _ => Ok(0.0),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Per-cycle trace CSV destination.
    pub trace: Option<PathBuf>,
    /// Directory receiving one PGM per captured frame.
    pub frames: Option<PathBuf>,
    pub frame_format: Option<PgmFormat>,
}

/// Run one scenario and write a single-row metrics CSV.
pub fn cmd_run(config: &Path, out: &Path, opts: &RunOptions) -> Result<MetricsRow, HarnessError> {
    let file: RunFile = load_toml(config)?;
    let run = file.resolve(opts.seed)?;
    let sim = Simulator::new(run.system)?;
    let mut frames = Vec::new();
    let keep_frames = opts.frames.is_some();
    let output = sim.run_scenario_with(&run.scenario, &mut |k, f| {
        if keep_frames {
            frames.push((k, f.clone()));
        }
    })?;
    let ascr = wave_ascr(&run.scenario.wave, &run.system.optics)?;
    let row = MetricsRow::new(
        &run.name,
        ascr,
        run.scenario.rx_speed,
        run.scenario.tracking,
        &output.metrics,
        run.scenario.data_rate,
    );
    write_csv_file(out, |buf| write_metrics(std::slice::from_ref(&row), buf))?;
    if let Some(path) = &opts.trace {
        write_csv_file(path, |buf| write_trace(&output.trace, buf))?;
    }
    if let Some(dir) = &opts.frames {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let format = opts.frame_format.unwrap_or(PgmFormat::P5);
        for (k, f) in &frames {
            let path = dir.join(format!("frame_{k:06}.pgm"));
            save_pgm(f, format, &path).map_err(io_err(&path))?;
        }
    }
    Ok(row)
}

/// Run every expanded sweep row (in parallel) and write them in file order.
/// Failing rows are left out of the table; once the successful rows are
/// written, the command returns a runtime error naming the failures.
pub fn cmd_sweep(
    sweep_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<Vec<MetricsRow>, HarnessError> {
    let file: SweepFile = load_toml(sweep_path)?;
    let (system, rows) = file.expand(seed)?;
    let out_path = match (out, &file.out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => sweep_path.parent().unwrap_or(Path::new(".")).join(p),
        (None, None) => {
            return Err(
                ConfigError::Invalid("no output path: pass --out or set `out`".into()).into(),
            )
        }
    };
    let sim = Simulator::new(system)?;
    let configs: Vec<_> = rows.iter().map(|r| r.scenario).collect();
    let results = sim.sweep(&configs);

    let mut ascr_cache: Vec<(f64, f64)> = Vec::new();
    let mut table = Vec::new();
    let mut failures = Vec::new();
    for (row, result) in rows.iter().zip(results) {
        match result {
            Ok(output) => {
                let ascr = match ascr_cache.iter().find(|(t, _)| *t == row.ascr_target) {
                    Some((_, a)) => *a,
                    None => {
                        let a = wave_ascr(&row.scenario.wave, &system.optics)?;
                        ascr_cache.push((row.ascr_target, a));
                        a
                    }
                };
                table.push(MetricsRow::new(
                    &row.scenario_id,
                    ascr,
                    row.scenario.rx_speed,
                    row.scenario.tracking,
                    &output.metrics,
                    row.scenario.data_rate,
                ));
            }
            Err(e) => failures.push(format!("{}: {e}", row.scenario_id)),
        }
    }
    write_csv_file(&out_path, |buf| write_metrics(&table, buf))?;
    if failures.is_empty() {
        Ok(table)
    } else {
        Err(HarnessError::Runtime(failures.join("; ")))
    }
}

/// Characterization summary written by `characterize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscrSummary {
    pub ascr: f64,
    pub peak_scr: f64,
    pub frac_above_1: f64,
    pub frac_above_2: f64,
    pub tau: f64,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wave: Option<WaveParams>,
}

impl AscrSummary {
    fn new(r: &AscrReport, wave: Option<WaveParams>) -> Self {
        Self {
            ascr: r.ascr,
            peak_scr: r.peak_scr,
            frac_above_1: r.frac_above_1,
            frac_above_2: r.frac_above_2,
            tau: r.tau,
            frames: r.frames,
            wave,
        }
    }
}

/// Input accepted by `characterize` when it is not an offset trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveFile {
    pub wave: WaveSpec,
    #[serde(default)]
    pub optics: Option<OpticalConstants>,
}

/// Parse an offset trace: a `tau_s=<value>` header, then `dx_m,dy_m` rows.
/// A `dx_m,dy_m` column header line is optional.
pub fn parse_offset_trace(text: &str) -> Result<Vec<SpotSample>, ConfigError> {
    let bad = |line: usize, msg: String| ConfigError::Invalid(format!("trace line {line}: {msg}"));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| ConfigError::Invalid("empty trace file".into()))?;
    let tau: f64 = header
        .trim()
        .strip_prefix("tau_s=")
        .ok_or_else(|| bad(1, "expected tau_s=<value> header".into()))?
        .trim()
        .parse()
        .map_err(|e| bad(1, format!("bad tau_s: {e}")))?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(bad(1, format!("tau_s must be positive, got {tau}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if out.is_empty() && line.replace(' ', "") == "dx_m,dy_m" {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| -> Result<f64, ConfigError> {
            parts
                .next()
                .ok_or_else(|| bad(i + 1, format!("missing {name}")))?
                .trim()
                .parse()
                .map_err(|e| bad(i + 1, format!("bad {name}: {e}")))
        };
        let x = field("dx_m")?;
        let y = field("dy_m")?;
        if parts.next().is_some() {
            return Err(bad(i + 1, "expected two columns".into()));
        }
        out.push(SpotSample {
            t: out.len() as f64 * tau,
            x,
            y,
            ..SpotSample::default()
        });
    }
    Ok(out)
}

/// Characterize a wave: the input is either an offset trace (recognised by
/// its `tau_s=` header) or a TOML file with a `wave` entry.
pub fn cmd_characterize(input: &Path, out: &Path) -> Result<AscrSummary, HarnessError> {
    let text = read_text(input)?;
    let origin = input.display().to_string();
    let runtime = |e: WaveError| HarnessError::Runtime(e.to_string());
    let summary = if text.trim_start().starts_with("tau_s=") {
        let samples = parse_offset_trace(&text)?;
        let report = measure_ascr(&samples, &OpticalConstants::default()).map_err(runtime)?;
        AscrSummary::new(&report, None)
    } else {
        let file: WaveFile = crate::config::parse_toml(&text, &origin)?;
        let optics = file.optics.unwrap_or_default();
        let wave = file.wave.resolve(&optics)?;
        let report = characterize(&wave, &optics).map_err(runtime)?;
        AscrSummary::new(&report, Some(wave))
    };
    write_toml(out, &summary)?;
    Ok(summary)
}

/// Calibration result written by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub target_ascr: f64,
    pub achieved_ascr: f64,
    pub wave: WaveParams,
}

pub fn cmd_calibrate(target: f64, out: &Path) -> Result<CalibrationRecord, HarnessError> {
    let optics = OpticalConstants::default();
    let wave = calibrate_wave(target, DEFAULT_ASCR_TOL, &optics).map_err(|e| match e {
        WaveError::Unreachable { .. } | WaveError::InvalidParams(_) => {
            HarnessError::Config(e.into())
        }
        other => HarnessError::Runtime(other.to_string()),
    })?;
    let achieved = characterize(&wave, &optics)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?
        .ascr;
    let record = CalibrationRecord {
        target_ascr: target,
        achieved_ascr: achieved,
        wave,
    };
    write_toml(out, &record)?;
    Ok(record)
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = toml::to_string(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}
