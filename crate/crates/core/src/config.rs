//! Strict TOML schemas for single runs and sweeps.
//!
//! A run file holds one `[scenario]` table plus optional hardware tables:
//!
//! ```toml
//! [scenario]
//! name = "moving"
//! data_rate = 1e9
//! rx_speed = 1.0
//! tracking = true
//! seed = 7
//! wave = { target_ascr = 0.0963 }
//!
//! [control]
//! alpha = 0.1
//! ```
//!
//! A sweep file lists named experiments, each with its own axes:
//!
//! ```toml
//! [[experiment]]
//! name = "ascr"
//! ascr_targets = [0.0963, 0.2344, 0.5155]
//! data_rates = [1e9]
//! ```
//!
//! Unknown keys anywhere are rejected.

use crate::control::ControlConfig;
use crate::geometry::{OpticalConstants, DEFAULT_LEVER_M};
use crate::imaging::PipelineConfig;
use crate::link::LinkConfig;
use crate::sim::{ReceiverConfig, ScenarioConfig, SystemConfig};
use crate::wave::{calibrate_wave_from, WaveError, WaveParams};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// Absolute ASCR tolerance (rad/s) when a wave is given by its target.
pub const DEFAULT_ASCR_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// A wave either spelled out or described by the ASCR it should produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum WaveSpec {
    Target {
        target_ascr: f64,
        #[serde(default)]
        tol: Option<f64>,
    },
    Explicit(WaveParams),
}

impl WaveSpec {
    pub fn resolve(&self, optics: &OpticalConstants) -> Result<WaveParams, ConfigError> {
        match *self {
            WaveSpec::Explicit(p) => {
                p.validate(optics)?;
                Ok(p)
            }
            WaveSpec::Target { target_ascr, tol } => Ok(calibrate_wave_from(
                target_ascr,
                tol.unwrap_or(DEFAULT_ASCR_TOL),
                optics,
                &WaveParams::default(),
            )?),
        }
    }
}

/// Hardware tables shared by run and sweep files; absent tables keep defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HardwareSection {
    pub optics: Option<OpticalConstants>,
    pub lever: Option<f64>,
    pub control: Option<ControlConfig>,
    pub imaging: Option<PipelineConfig>,
    pub link: Option<LinkConfig>,
    pub receiver: Option<ReceiverConfig>,
}

impl HardwareSection {
    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            optics: self.optics.unwrap_or_default(),
            lever: self.lever.unwrap_or(DEFAULT_LEVER_M),
            control: self.control.unwrap_or_default(),
            imaging: self.imaging.unwrap_or_default(),
            link: self.link.unwrap_or_default(),
            receiver: self.receiver.unwrap_or_default(),
        }
    }
}

/// Timing knobs with the simulator's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    #[serde(default = "defaults::warmup")]
    pub warmup: f64,
    #[serde(default = "defaults::cycle_period")]
    pub cycle_period: f64,
    #[serde(default = "defaults::exposure")]
    pub exposure: f64,
    #[serde(default = "defaults::substep")]
    pub substep: f64,
}

mod defaults {
    use crate::sim::ScenarioConfig;

    pub fn duration() -> f64 {
        ScenarioConfig::default().duration
    }
    pub fn warmup() -> f64 {
        ScenarioConfig::default().warmup
    }
    pub fn cycle_period() -> f64 {
        ScenarioConfig::default().cycle_period
    }
    pub fn exposure() -> f64 {
        ScenarioConfig::default().exposure
    }
    pub fn substep() -> f64 {
        ScenarioConfig::default().substep
    }
    pub fn tracking() -> bool {
        true
    }
    pub fn speeds() -> Vec<f64> {
        vec![0.0]
    }
    pub fn ascr() -> Vec<f64> {
        vec![0.0]
    }
    pub fn tracking_axis() -> Vec<bool> {
        vec![true, false]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default)]
    pub name: Option<String>,
    pub data_rate: f64,
    #[serde(default)]
    pub rx_speed: f64,
    #[serde(default = "defaults::tracking")]
    pub tracking: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub wave: Option<WaveSpec>,
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    #[serde(default = "defaults::warmup")]
    pub warmup: f64,
    #[serde(default = "defaults::cycle_period")]
    pub cycle_period: f64,
    #[serde(default = "defaults::exposure")]
    pub exposure: f64,
    #[serde(default = "defaults::substep")]
    pub substep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub optics: Option<OpticalConstants>,
    #[serde(default)]
    pub lever: Option<f64>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub imaging: Option<PipelineConfig>,
    #[serde(default)]
    pub link: Option<LinkConfig>,
    #[serde(default)]
    pub receiver: Option<ReceiverConfig>,
}

/// A run file after wave calibration and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub name: String,
    pub system: SystemConfig,
    pub scenario: ScenarioConfig,
}

impl RunFile {
    pub fn hardware(&self) -> HardwareSection {
        HardwareSection {
            optics: self.optics,
            lever: self.lever,
            control: self.control,
            imaging: self.imaging,
            link: self.link,
            receiver: self.receiver,
        }
    }

    pub fn resolve(&self, seed_override: Option<u64>) -> Result<ResolvedRun, ConfigError> {
        let system = self.hardware().system();
        system
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.scenario;
        let wave = match &s.wave {
            Some(w) => Some(w.resolve(&system.optics)?),
            None => None,
        };
        let scenario = ScenarioConfig {
            wave,
            rx_speed: s.rx_speed,
            tracking: s.tracking,
            data_rate: s.data_rate,
            duration: s.duration,
            warmup: s.warmup,
            cycle_period: s.cycle_period,
            exposure: s.exposure,
            substep: s.substep,
            seed: seed_override.unwrap_or(s.seed),
        };
        scenario
            .validate(&system)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ResolvedRun {
            name: s.name.clone().unwrap_or_else(|| "run".into()),
            system,
            scenario,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every row uses the base seed, so tracked and untracked rows see the
    /// same camera noise.
    #[default]
    Fixed,
    /// Row `i` uses `seed + i`.
    PerRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default = "defaults::ascr")]
    pub ascr_targets: Vec<f64>,
    #[serde(default = "defaults::speeds")]
    pub rx_speeds: Vec<f64>,
    pub data_rates: Vec<f64>,
    #[serde(default = "defaults::tracking_axis")]
    pub tracking: Vec<bool>,
    #[serde(default)]
    pub timing: Option<TimingSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    /// Metrics path used when `--out` is not given.
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub ascr_tol: Option<f64>,
    #[serde(default)]
    pub experiment: Vec<ExperimentSection>,
    #[serde(default)]
    pub optics: Option<OpticalConstants>,
    #[serde(default)]
    pub lever: Option<f64>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub imaging: Option<PipelineConfig>,
    #[serde(default)]
    pub link: Option<LinkConfig>,
    #[serde(default)]
    pub receiver: Option<ReceiverConfig>,
}

/// One expanded sweep row, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario_id: String,
    pub ascr_target: f64,
    pub scenario: ScenarioConfig,
}

impl SweepFile {
    pub fn hardware(&self) -> HardwareSection {
        HardwareSection {
            optics: self.optics,
            lever: self.lever,
            control: self.control,
            imaging: self.imaging,
            link: self.link,
            receiver: self.receiver,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment.is_empty() {
            return Err(ConfigError::Invalid("no [[experiment]] entries".into()));
        }
        let mut names = HashSet::new();
        for e in &self.experiment {
            if !names.insert(e.name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate experiment name {:?}",
                    e.name
                )));
            }
            let axes = [
                ("ascr_targets", e.ascr_targets.is_empty()),
                ("rx_speeds", e.rx_speeds.is_empty()),
                ("data_rates", e.data_rates.is_empty()),
                ("tracking", e.tracking.is_empty()),
            ];
            if let Some((axis, _)) = axes.iter().find(|(_, empty)| *empty) {
                return Err(ConfigError::Invalid(format!(
                    "experiment {:?}: axis {axis} is empty",
                    e.name
                )));
            }
        }
        Ok(())
    }

    /// Expand every experiment into rows ordered by ASCR, speed, rate, then
    /// tracking flag. Each distinct ASCR target is calibrated once.
    pub fn expand(
        &self,
        seed_override: Option<u64>,
    ) -> Result<(SystemConfig, Vec<SweepRow>), ConfigError> {
        self.validate()?;
        let system = self.hardware().system();
        system
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let tol = self.ascr_tol.unwrap_or(DEFAULT_ASCR_TOL);
        let base_seed = seed_override.unwrap_or(self.seed);
        let mut waves: Vec<(f64, Option<WaveParams>)> = Vec::new();
        let mut rows = Vec::new();
        for e in &self.experiment {
            let timing = e.timing.unwrap_or(TimingSection {
                duration: defaults::duration(),
                warmup: defaults::warmup(),
                cycle_period: defaults::cycle_period(),
                exposure: defaults::exposure(),
                substep: defaults::substep(),
            });
            for &target in &e.ascr_targets {
                let wave = match waves.iter().find(|(t, _)| *t == target) {
                    Some((_, w)) => *w,
                    None => {
                        let w = if target == 0.0 {
                            None
                        } else {
                            let target_spec = WaveSpec::Target {
                                target_ascr: target,
                                tol: Some(tol),
                            };
                            Some(target_spec.resolve(&system.optics)?)
                        };
                        waves.push((target, w));
                        w
                    }
                };
                for &rx_speed in &e.rx_speeds {
                    for &data_rate in &e.data_rates {
                        for &tracking in &e.tracking {
                            let seed = match self.seed_policy {
                                SeedPolicy::Fixed => base_seed,
                                SeedPolicy::PerRow => base_seed.wrapping_add(rows.len() as u64),
                            };
                            let scenario = ScenarioConfig {
                                wave,
                                rx_speed,
                                tracking,
                                data_rate,
                                duration: timing.duration,
                                warmup: timing.warmup,
                                cycle_period: timing.cycle_period,
                                exposure: timing.exposure,
                                substep: timing.substep,
                                seed,
                            };
                            scenario.validate(&system).map_err(|err| {
                                ConfigError::Invalid(format!("experiment {:?}: {err}", e.name))
                            })?;
                            rows.push(SweepRow {
                                scenario_id: e.name.clone(),
                                ascr_target: target,
                                scenario,
                            });
                        }
                    }
                }
            }
        }
        Ok((system, rows))
    }
}

/// Parse a TOML document, keeping the parser's line/column diagnostic.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(
    text: &str,
    origin: &str,
) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    parse_toml(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_run() {
        let f: RunFile = parse_toml("[scenario]\ndata_rate = 1e9\n", "t").unwrap();
        let r = f.resolve(None).unwrap();
        assert_eq!(r.scenario.data_rate, 1e9);
        assert!(r.scenario.tracking);
        assert_eq!(r.scenario.wave, None);
        assert_eq!(r.system, SystemConfig::default());
    }

    #[test]
    fn missing_data_rate_is_named() {
        let err = parse_toml::<RunFile>("[scenario]\nrx_speed = 1.0\n", "t").unwrap_err();
        assert!(err.to_string().contains("data_rate"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "[scenario]\ndata_rate = 1e9\nrx_sped = 1.0\n",
            "[scenario]\ndata_rate = 1e9\n[control]\nalpha = 0.1\nbeta = 2\n",
            "[scenario]\ndata_rate = 1e9\nwave = { amplitude = 0.01, omeg = 3 }\n",
            "[scenario]\ndata_rate = 1e9\n[extra]\n",
        ] {
            assert!(parse_toml::<RunFile>(text, "t").is_err(), "{text}");
        }
    }

    #[test]
    fn wave_forms() {
        let f: RunFile = parse_toml(
            "[scenario]\ndata_rate = 1e9\nwave = { amplitude = 0.02, omega = 6.0 }\n",
            "t",
        )
        .unwrap();
        let w = f.resolve(None).unwrap().scenario.wave.unwrap();
        assert_eq!((w.amplitude, w.omega), (0.02, 6.0));
        let f: RunFile = parse_toml(
            "[scenario]\ndata_rate = 1e9\nwave = { target_ascr = 0.0 }\n",
            "t",
        )
        .unwrap();
        assert_eq!(
            f.resolve(None).unwrap().scenario.wave.unwrap().amplitude,
            0.0
        );
    }

    #[test]
    fn sweep_expansion_order() {
        let f: SweepFile = parse_toml(
            "seed = 3\n[[experiment]]\nname = \"speed\"\nrx_speeds = [0.5, 1.0]\ndata_rates = [1e9]\n",
            "t",
        )
        .unwrap();
        let (_, rows) = f.expand(None).unwrap();
        let keys: Vec<(f64, bool)> = rows
            .iter()
            .map(|r| (r.scenario.rx_speed, r.scenario.tracking))
            .collect();
        assert_eq!(
            keys,
            vec![(0.5, true), (0.5, false), (1.0, true), (1.0, false)]
        );
        assert!(rows.iter().all(|r| r.scenario.seed == 3));
    }

    #[test]
    fn empty_axis_rejected() {
        let f: SweepFile = parse_toml(
            "[[experiment]]\nname = \"x\"\nrx_speeds = []\ndata_rates = [1e9]\n",
            "t",
        )
        .unwrap();
        let err = f.expand(None).unwrap_err();
        assert!(err.to_string().contains("rx_speeds"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let f: SweepFile = parse_toml(
            "[[experiment]]\nname = \"x\"\ndata_rates = [1e9]\n[[experiment]]\nname = \"x\"\ndata_rates = [1e8]\n",
            "t",
        )
        .unwrap();
        assert!(f.validate().is_err());
    }
}
