//! Closed-loop simulation over simulated time.
//!
//! The plant (wave slope and receiver position) is a function of time only.
//! Between camera frames the spot offset is sampled every `substep`. Every
//! `cycle_period` the loop runs:
//!
//! 1. exposure over `[t_k, t_k + exposure]`, sampled at its midpoint, and the
//!    spot is located in the rendered feedback frame;
//! 2. both axis controllers update from the located offset;
//! 3. the new tilt is commanded at the end of the exposure and lands
//!    `settle` seconds later.
//!
//! A frame without a detected spot leaves the controllers and the mirror
//! untouched.

use crate::control::{
    base_gain, AxisControllerState, ControlConfig, ControlError, MirrorState, TIME_EPS,
};
use crate::geometry::{beam_to_plane, OpticalConstants, SlopeState, SpotSample, DEFAULT_LEVER_M};
use crate::imaging::{locate_spot, render_frame_with, Frame, PipelineConfig};
use crate::link::{summarize_run, LinkConfig, LinkModel, PacketResult, RunMetrics};
use crate::wave::{sample_slope, WaveParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Rail carrying the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    /// Travel span (m), centered on the beam axis.
    pub range: f64,
    /// Deceleration used to reverse at the rail ends (m/s^2); 0 reverses
    /// instantaneously.
    pub turn_accel: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            range: 0.20,
            turn_accel: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverState {
    pub x: f64,
    pub v: f64,
    pub range: f64,
    pub direction: i8,
}

/// Receiver kinematics at time `t`: starts at the rail center moving toward +x
/// and reciprocates over `range`.
pub fn receiver_at(t: f64, speed: f64, rail: &ReceiverConfig) -> ReceiverState {
    let half = 0.5 * rail.range;
    let state = |x: f64, v: f64| ReceiverState {
        x,
        v,
        range: rail.range,
        direction: if v < 0.0 { -1 } else { 1 },
    };
    if speed == 0.0 {
        return state(0.0, 0.0);
    }
    if rail.turn_accel <= 0.0 {
        let u = (speed * t + half).rem_euclid(2.0 * rail.range);
        return if u < rail.range {
            state(-half + u, speed)
        } else {
            state(half - (u - rail.range), -speed)
        };
    }
    let a = rail.turn_accel;
    let brake = speed * speed / (2.0 * a);
    let cruise_time = (rail.range - 2.0 * brake) / speed;
    let turn_time = 2.0 * speed / a;
    let period = 2.0 * (cruise_time + turn_time);
    let mut u = (t + 0.5 * cruise_time).rem_euclid(period);
    if u < cruise_time {
        return state(-half + brake + speed * u, speed);
    }
    u -= cruise_time;
    if u < turn_time {
        return state(half - brake + speed * u - 0.5 * a * u * u, speed - a * u);
    }
    u -= turn_time;
    if u < cruise_time {
        return state(half - brake - speed * u, -speed);
    }
    u -= cruise_time;
    state(-half + brake - speed * u + 0.5 * a * u * u, -speed + a * u)
}

/// Hardware and model parameters shared by every scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub optics: OpticalConstants,
    /// Mirror-to-receiver lever arm (m).
    pub lever: f64,
    pub control: ControlConfig,
    pub imaging: PipelineConfig,
    pub link: LinkConfig,
    pub receiver: ReceiverConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            optics: OpticalConstants::default(),
            lever: DEFAULT_LEVER_M,
            control: ControlConfig::default(),
            imaging: PipelineConfig::default(),
            link: LinkConfig::default(),
            receiver: ReceiverConfig::default(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = |e: String| SimError::Config(e);
        self.optics.validate().map_err(|e| cfg(e.to_string()))?;
        if !(self.lever > 0.0) {
            return Err(cfg(format!("lever must be positive, got {}", self.lever)));
        }
        self.control.validate().map_err(cfg)?;
        self.imaging.validate().map_err(cfg)?;
        self.link.validate().map_err(cfg)?;
        if !(self.receiver.range > 0.0 && self.receiver.turn_accel >= 0.0) {
            return Err(cfg(
                "receiver range must be positive and turn_accel nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub wave: Option<WaveParams>,
    /// m/s; 0 keeps the receiver parked at the rail center.
    pub rx_speed: f64,
    pub tracking: bool,
    /// bit/s
    pub data_rate: f64,
    /// Simulated time (s).
    pub duration: f64,
    /// Settling time excluded from packets and statistics (s).
    pub warmup: f64,
    pub cycle_period: f64,
    pub exposure: f64,
    pub substep: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            wave: None,
            rx_speed: 0.0,
            tracking: true,
            data_rate: 1e9,
            duration: 10.0,
            warmup: 0.1,
            cycle_period: 0.007,
            exposure: 0.001,
            substep: 1e-4,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, sys: &SystemConfig) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if let Some(w) = &self.wave {
            w.validate(&sys.optics)
                .map_err(|e| SimError::Config(e.to_string()))?;
        }
        if !(self.rx_speed >= 0.0 && self.rx_speed.is_finite()) {
            return bad(format!(
                "rx_speed must be nonnegative, got {}",
                self.rx_speed
            ));
        }
        let a = sys.receiver.turn_accel;
        if a > 0.0 && self.rx_speed * self.rx_speed > a * sys.receiver.range {
            return bad(format!(
                "rx_speed {} cannot be reached on a {} m rail with turn_accel {a}",
                self.rx_speed, sys.receiver.range
            ));
        }
        if !(self.data_rate > 0.0 && self.data_rate.is_finite()) {
            return bad(format!(
                "data_rate must be positive, got {}",
                self.data_rate
            ));
        }
        if !(self.substep > 0.0 && self.cycle_period > 0.0) {
            return bad("substep and cycle_period must be positive".into());
        }
        if self.substep >= self.cycle_period {
            return bad(format!(
                "substep {} must be shorter than cycle_period {}",
                self.substep, self.cycle_period
            ));
        }
        if !(self.exposure >= 0.0 && self.exposure + sys.control.settle <= self.cycle_period) {
            return bad("exposure plus settle must fit inside one cycle".into());
        }
        if !(self.warmup >= 0.0 && self.duration > self.warmup) {
            return bad(format!(
                "duration {} must exceed warmup {}",
                self.duration, self.warmup
            ));
        }
        let packet = sys.link.symbols_per_packet as f64 / self.data_rate;
        let needed = packet * sys.link.packets_per_run as f64;
        if self.duration - self.warmup < needed {
            return bad(format!(
                "measured span {} s cannot hold {} packets of {packet} s",
                self.duration - self.warmup,
                sys.link.packets_per_run
            ));
        }
        Ok(())
    }
}

/// Per-cycle observability record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    /// Cycle start (s).
    pub t: f64,
    /// True spot-minus-receiver offset at the exposure midpoint (m).
    pub offset: (f64, f64),
    /// Offset recovered from the frame.
    pub located: Option<(f64, f64)>,
    /// Tilt target in force after this cycle (rad).
    pub tilt: (f64, f64),
    pub s: (f64, f64),
}

impl CycleRecord {
    pub fn blob_found(&self) -> bool {
        self.located.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopTrace {
    pub cycles: Vec<CycleRecord>,
    /// Offset samples at every substep.
    pub samples: Vec<SpotSample>,
    /// Substep indices where the beam could not leave the water.
    pub outages: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PlantSample {
    offset: Option<(f64, f64)>,
}

/// Mutable simulation state for one run.
#[derive(Debug, Clone)]
pub struct World<'a> {
    sys: &'a SystemConfig,
    cfg: &'a ScenarioConfig,
    pub mirror: MirrorState,
    pub ctrl_x: AxisControllerState,
    pub ctrl_y: AxisControllerState,
    /// Last tilt target sent to the mirror.
    pub commanded: (f64, f64),
    /// Index of the next substep sample.
    pub substep_index: u64,
    /// Index of the next cycle.
    pub cycle_index: u64,
    pub trace: LoopTrace,
}

impl<'a> World<'a> {
    pub fn new(sys: &'a SystemConfig, cfg: &'a ScenarioConfig) -> Self {
        let k = base_gain(sys.lever);
        Self {
            sys,
            cfg,
            mirror: MirrorState::from_config(&sys.control),
            ctrl_x: AxisControllerState::new(&sys.control, k),
            ctrl_y: AxisControllerState::new(&sys.control, k),
            commanded: (0.0, 0.0),
            substep_index: 0,
            cycle_index: 0,
            trace: LoopTrace::default(),
        }
    }

    pub fn substep_time(&self, i: u64) -> f64 {
        i as f64 * self.cfg.substep
    }

    pub fn cycle_start(&self, k: u64) -> f64 {
        k as f64 * self.cfg.cycle_period
    }

    pub fn receiver(&self, t: f64) -> ReceiverState {
        receiver_at(t, self.cfg.rx_speed, &self.sys.receiver)
    }

    pub fn slope(&self, t: f64) -> SlopeState {
        self.cfg
            .wave
            .as_ref()
            .map_or_else(SlopeState::flat, |w| sample_slope(w, t))
    }

    fn plant(&self, t: f64) -> PlantSample {
        let (tx, ty) = self.mirror.tilt();
        let spot = beam_to_plane(tx, ty, &self.slope(t), &self.sys.optics, self.sys.lever);
        let rx = self.receiver(t);
        PlantSample {
            offset: spot.ok().map(|(x, y)| (x - rx.x, y)),
        }
    }

    /// Advance the mirror to the next substep instant and record the offset.
    pub fn step_substep(&mut self) -> Result<(), SimError> {
        let i = self.substep_index;
        let t = self.substep_time(i);
        self.mirror = self.mirror.advance(t)?;
        let sample = self.plant(t);
        let (x, y) = match sample.offset {
            Some(o) => o,
            None => {
                self.trace.outages.push(self.trace.samples.len());
                (0.0, 0.0)
            }
        };
        let (vx, vy) = match self.trace.samples.last() {
            Some(p) if sample.offset.is_some() => {
                ((x - p.x) / self.cfg.substep, (y - p.y) / self.cfg.substep)
            }
            _ => (0.0, 0.0),
        };
        self.trace.samples.push(SpotSample { t, x, y, vx, vy });
        self.substep_index += 1;
        Ok(())
    }

    /// Capture, locate, control and command for the next cycle.
    pub fn run_cycle(
        &mut self,
        rng_seed: u64,
        on_frame: &mut dyn FnMut(u64, &Frame),
    ) -> Result<(), SimError> {
        let k = self.cycle_index;
        let t_start = self.cycle_start(k);
        let t_capture = t_start + 0.5 * self.cfg.exposure;
        let t_command = t_start + self.cfg.exposure;
        self.mirror = self.mirror.advance(t_capture)?;
        let offset = self.plant(t_capture).offset;

        let img = &self.sys.imaging;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(k + 1);
        let center = offset.map_or((f64::INFINITY, f64::INFINITY), |(x, y)| {
            (x * img.camera_scale, y * img.camera_scale)
        });
        let frame = if center.0.is_finite() {
            render_frame_with(center, img.spot_sigma, img.peak, img, &mut rng)
        } else {
            render_frame_with((1e3, 1e3), img.spot_sigma, 0.0, img, &mut rng)
        };
        on_frame(k, &frame);
        let located =
            locate_spot(&frame, img).map(|(x, y)| (x / img.camera_scale, y / img.camera_scale));

        if let (true, Some((lx, ly))) = (self.cfg.tracking, located) {
            let dt = self.cfg.cycle_period;
            let (dx, cx) = self.ctrl_x.update(lx, 0.0, dt);
            let (dy, cy) = self.ctrl_y.update(ly, 0.0, dt);
            self.ctrl_x = cx;
            self.ctrl_y = cy;
            let target = (self.commanded.0 + dx, self.commanded.1 + dy);
            self.mirror = self.mirror.command_mirror(target, t_command);
            self.commanded = self.mirror.pending.map_or(target, |p| p.tilt);
        }
        self.trace.cycles.push(CycleRecord {
            t: t_start,
            offset: offset.unwrap_or((f64::NAN, f64::NAN)),
            located,
            tilt: self.commanded,
            s: (self.ctrl_x.s, self.ctrl_y.s),
        });
        self.cycle_index += 1;
        Ok(())
    }

    /// Run substeps and cycles in time order up to `duration`.
    pub fn run_to_end(&mut self, on_frame: &mut dyn FnMut(u64, &Frame)) -> Result<(), SimError> {
        let n_sub = (self.cfg.duration / self.cfg.substep).round() as u64;
        let half_exposure = 0.5 * self.cfg.exposure;
        while self.substep_index <= n_sub {
            let t = self.substep_time(self.substep_index);
            self.step_substep()?;
            let t_next = t + self.cfg.substep;
            loop {
                let t_cap = self.cycle_start(self.cycle_index) + half_exposure;
                if t_cap >= t_next - TIME_EPS || t_cap > self.cfg.duration + TIME_EPS {
                    break;
                }
                self.run_cycle(self.cfg.seed, on_frame)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub packets: Vec<PacketResult>,
    pub trace: LoopTrace,
}

/// Radial offset at `t` by linear interpolation of the substep trace.
fn radial_at(trace: &LoopTrace, outage: &[bool], dt: f64, t: f64) -> f64 {
    let s = &trace.samples;
    let u = (t / dt).clamp(0.0, (s.len() - 1) as f64);
    let i = (u.floor() as usize).min(s.len() - 1);
    let j = (i + 1).min(s.len() - 1);
    if outage[i] || outage[j] {
        return f64::INFINITY;
    }
    let f = u - i as f64;
    let x = s[i].x * (1.0 - f) + s[j].x * f;
    let y = s[i].y * (1.0 - f) + s[j].y * f;
    x.hypot(y)
}

/// Offsets spanning `[start, end]`: both window edges (interpolated) plus
/// every substep sample inside.
pub fn packet_window(
    trace: &LoopTrace,
    outage: &[bool],
    dt: f64,
    start: f64,
    end: f64,
) -> Vec<f64> {
    let mut out = vec![radial_at(trace, outage, dt, start)];
    let first = (start / dt).floor() as usize + 1;
    let last = ((end / dt).ceil() as usize).min(trace.samples.len());
    for (s, &dark) in trace.samples[first.min(last)..last]
        .iter()
        .zip(&outage[first.min(last)..last])
    {
        if s.t > start && s.t < end {
            out.push(if dark { f64::INFINITY } else { s.x.hypot(s.y) });
        }
    }
    out.push(radial_at(trace, outage, dt, end));
    out
}

/// Stratified packet start times: one packet per equal slot of the measured
/// span, at a seeded uniform position inside the slot.
pub fn packet_starts(cfg: &ScenarioConfig, packets: usize, packet_len: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let span = cfg.duration - cfg.warmup;
    let slot = span / packets as f64;
    let slack = (slot - packet_len).max(0.0);
    (0..packets)
        .map(|k| cfg.warmup + k as f64 * slot + rng.random::<f64>() * slack)
        .collect()
}

/// Runs scenarios against one calibrated link model.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub sys: SystemConfig,
    pub link: LinkModel,
}

impl Simulator {
    pub fn new(sys: SystemConfig) -> Result<Self, SimError> {
        sys.validate()?;
        let link = LinkModel::new(sys.link).map_err(SimError::Config)?;
        Ok(Self { sys, link })
    }

    pub fn run_scenario(&self, cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
        self.run_scenario_with(cfg, &mut |_, _| {})
    }

    /// Like [`Self::run_scenario`], handing every captured frame to `on_frame`.
    pub fn run_scenario_with(
        &self,
        cfg: &ScenarioConfig,
        on_frame: &mut dyn FnMut(u64, &Frame),
    ) -> Result<RunOutput, SimError> {
        cfg.validate(&self.sys)?;
        let mut world = World::new(&self.sys, cfg);
        world.run_to_end(on_frame)?;
        let trace = world.trace;

        let mut outage = vec![false; trace.samples.len()];
        for &i in &trace.outages {
            outage[i] = true;
        }
        let link_cfg = LinkConfig {
            data_rate: cfg.data_rate,
            ..self.sys.link
        };
        let packet_len = link_cfg.packet_duration();
        let packets: Vec<PacketResult> = packet_starts(cfg, link_cfg.packets_per_run, packet_len)
            .into_iter()
            .map(|start| {
                let window = packet_window(&trace, &outage, cfg.substep, start, start + packet_len);
                self.link.eval_packet(&window)
            })
            .collect();
        let measured: Vec<SpotSample> = trace
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| s.t >= cfg.warmup - TIME_EPS && !outage[*i])
            .map(|(_, s)| *s)
            .collect();
        let metrics = summarize_run(&packets, measured, cfg.data_rate);
        Ok(RunOutput {
            metrics,
            packets,
            trace,
        })
    }

    /// Independent runs; results keep the input order.
    pub fn sweep(&self, cfgs: &[ScenarioConfig]) -> Vec<Result<RunOutput, SimError>> {
        cfgs.par_iter().map(|c| self.run_scenario(c)).collect()
    }
}
