//! Synthetic wave slopes and the slope-changing-rate characterization.
//!
//! The wave tank is replaced by a periodic slope at the beam crossing point.
//! [`measure_ascr`] works the way the camera procedure does: it only sees
//! receiver-plane offsets and recovers slopes by inverting the refraction
//! displacement.

use crate::geometry::{
    refract_displacement, slope_change, slopes_from_offset, spot_speed, surface_normal,
    GeometryError, OpticalConstants, SlopeState, SpotSample,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Frame rate of the characterization camera.
pub const CHARACTERIZATION_FPS: f64 = 220.0;
/// Frames recorded per characterization.
pub const CHARACTERIZATION_FRAMES: usize = 10_000;
/// Board frequency used as the starting point for calibration (rad/s).
pub const DEFAULT_OMEGA: f64 = TAU * 1.5;
/// Fastest board motion the calibrator may ask for (rad/s).
pub const MAX_OMEGA: f64 = TAU * 2.0;
/// Peak slope angles are kept below this fraction of the critical angle.
pub const SAFE_SLOPE_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("need at least two offset samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample interval at index {index} is {found} s, expected {expected} s")]
    NonUniformInterval {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error("target ASCR {target} rad/s exceeds the reachable maximum {max} rad/s")]
    Unreachable { target: f64, max: f64 },
    #[error("invalid wave parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveParams {
    /// Peak slope of the fundamental.
    pub amplitude: f64,
    /// Angular frequency of the fundamental (rad/s).
    pub omega: f64,
    pub phase: f64,
    /// Share of the motion along y; 1.0 is pure y.
    pub axis_mix: f64,
    /// Peak slope of the optional second harmonic at 2*omega.
    pub amplitude2: f64,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            omega: DEFAULT_OMEGA,
            phase: 0.0,
            axis_mix: 1.0,
            amplitude2: 0.0,
        }
    }
}

impl WaveParams {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn validate(&self, c: &OpticalConstants) -> Result<(), WaveError> {
        let bad = |msg: String| Err(WaveError::InvalidParams(msg));
        let finite = [
            self.amplitude,
            self.omega,
            self.phase,
            self.axis_mix,
            self.amplitude2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("all fields must be finite".into());
        }
        if self.amplitude < 0.0 || self.amplitude2 < 0.0 {
            return bad("amplitudes must be nonnegative".into());
        }
        if self.omega < 0.0 {
            return bad("omega must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.axis_mix) {
            return bad(format!(
                "axis_mix must lie in [0, 1], got {}",
                self.axis_mix
            ));
        }
        let ceiling = c.critical_angle().tan();
        if self.amplitude + self.amplitude2 >= ceiling {
            return bad(format!(
                "peak slope {} reaches the total-internal-reflection slope {ceiling}",
                self.amplitude + self.amplitude2
            ));
        }
        Ok(())
    }
}

/// Largest peak slope the calibrator will use.
pub fn max_safe_slope(c: &OpticalConstants) -> f64 {
    (SAFE_SLOPE_FRACTION * c.critical_angle()).tan()
}

pub fn sample_slope(params: &WaveParams, t: f64) -> SlopeState {
    let arg = params.omega * t + params.phase;
    let base = params.amplitude * arg.sin() + params.amplitude2 * (2.0 * arg).sin();
    SlopeState::from_slopes((1.0 - params.axis_mix) * base, params.axis_mix * base)
}

/// Time derivative of the slope angles `(gamma_x', gamma_y')`.
pub fn slope_angle_rate(params: &WaveParams, t: f64) -> (f64, f64) {
    let arg = params.omega * t + params.phase;
    let base = params.amplitude * arg.sin() + params.amplitude2 * (2.0 * arg).sin();
    let dbase =
        params.omega * (params.amplitude * arg.cos() + 2.0 * params.amplitude2 * (2.0 * arg).cos());
    let rate = |mix: f64| mix * dbase / (1.0 + (mix * base).powi(2));
    (rate(1.0 - params.axis_mix), rate(params.axis_mix))
}

/// Receiver-plane offsets of the bare (untracked) beam sampled at `fps`.
pub fn simulate_offsets(
    params: &WaveParams,
    c: &OpticalConstants,
    frames: usize,
    fps: f64,
) -> Result<Vec<SpotSample>, WaveError> {
    let tau = 1.0 / fps;
    (0..frames)
        .map(|i| {
            let t = i as f64 * tau;
            let s = sample_slope(params, t);
            let (rx, ry) = slope_angle_rate(params, t);
            Ok(SpotSample {
                t,
                x: refract_displacement(s.gamma_x, c)?,
                y: refract_displacement(s.gamma_y, c)?,
                vx: spot_speed(s.gamma_x, rx, c)?,
                vy: spot_speed(s.gamma_y, ry, c)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscrReport {
    /// Mean slope changing rate (rad/s).
    pub ascr: f64,
    pub peak_scr: f64,
    pub frac_above_1: f64,
    pub frac_above_2: f64,
    pub tau: f64,
    pub frames: usize,
    /// Per-interval SCR (rad/s), nonnegative.
    pub scr_series: Vec<f64>,
    /// Signed per-axis rates from differencing the slope angles (diagnostic).
    pub signed_scr_x: Vec<f64>,
    pub signed_scr_y: Vec<f64>,
}

/// Characterize a recorded offset trace taken at a fixed interval.
pub fn measure_ascr(offsets: &[SpotSample], c: &OpticalConstants) -> Result<AscrReport, WaveError> {
    if offsets.len() < 2 {
        return Err(WaveError::TooFewSamples(offsets.len()));
    }
    let tau = offsets[1].t - offsets[0].t;
    if !(tau > 0.0) {
        return Err(WaveError::NonUniformInterval {
            index: 0,
            expected: tau,
            found: tau,
        });
    }
    let tol = 1e-6 * tau;
    for (i, w) in offsets.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if (dt - tau).abs() > tol {
            return Err(WaveError::NonUniformInterval {
                index: i,
                expected: tau,
                found: dt,
            });
        }
    }
    let slopes = offsets
        .iter()
        .map(|s| slopes_from_offset(s.x, s.y, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ascr_from_slopes(&slopes, tau))
}

/// Characterization from slopes that are already known, skipping the offset inversion.
pub fn ascr_from_slopes(slopes: &[(f64, f64)], tau: f64) -> AscrReport {
    let normals: Vec<_> = slopes
        .iter()
        .map(|&(fx, fy)| surface_normal(fx, fy))
        .collect();
    let scr_series: Vec<f64> = normals
        .windows(2)
        .map(|w| slope_change(&w[0], &w[1]) / tau)
        .collect();
    let signed = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        slopes
            .windows(2)
            .map(|w| (pick(&w[1]).atan() - pick(&w[0]).atan()) / tau)
            .collect()
    };
    let n = scr_series.len() as f64;
    let ascr = scr_series.iter().sum::<f64>() / n;
    let frac = |lim: f64| scr_series.iter().filter(|v| v.abs() > lim).count() as f64 / n;
    AscrReport {
        ascr,
        peak_scr: scr_series.iter().cloned().fold(0.0, f64::max),
        frac_above_1: frac(1.0),
        frac_above_2: frac(2.0),
        tau,
        frames: slopes.len(),
        signed_scr_x: signed(|s| s.0),
        signed_scr_y: signed(|s| s.1),
        scr_series,
    }
}

/// Simulate the standard 10,000-frame, 220-fps characterization of a wave.
pub fn characterize(params: &WaveParams, c: &OpticalConstants) -> Result<AscrReport, WaveError> {
    params.validate(c)?;
    let offsets = simulate_offsets(params, c, CHARACTERIZATION_FRAMES, CHARACTERIZATION_FPS)?;
    measure_ascr(&offsets, c)
}

/// Find wave parameters whose characterized ASCR is within `tol` of `target`.
pub fn calibrate_wave(
    target: f64,
    tol: f64,
    c: &OpticalConstants,
) -> Result<WaveParams, WaveError> {
    calibrate_wave_from(target, tol, c, &WaveParams::default())
}

/// Like [`calibrate_wave`], keeping `template`'s phase, axis mix and the
/// harmonic-to-fundamental ratio. The amplitude is searched at the template
/// frequency first; the frequency is raised only when the safe slope ceiling
/// cannot reach the target.
pub fn calibrate_wave_from(
    target: f64,
    tol: f64,
    c: &OpticalConstants,
    template: &WaveParams,
) -> Result<WaveParams, WaveError> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(WaveError::InvalidParams(format!(
            "target ASCR must be nonnegative, got {target}"
        )));
    }
    if !(tol > 0.0) {
        return Err(WaveError::InvalidParams(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let ratio = if template.amplitude > 0.0 {
        template.amplitude2 / template.amplitude
    } else {
        0.0
    };
    let omega0 = if template.omega > 0.0 {
        template.omega
    } else {
        DEFAULT_OMEGA
    };
    let mut base = WaveParams {
        omega: omega0,
        ..*template
    };
    if target == 0.0 {
        base.amplitude = 0.0;
        base.amplitude2 = 0.0;
        return Ok(base);
    }
    let a_max = max_safe_slope(c) / (1.0 + ratio);
    let with_amp = |a: f64, omega: f64| WaveParams {
        amplitude: a,
        amplitude2: ratio * a,
        omega,
        ..base
    };
    let ascr_at = |p: &WaveParams| characterize(p, c).map(|r| r.ascr);

    let top = with_amp(a_max, omega0);
    let top_ascr = ascr_at(&top)?;
    if target <= top_ascr {
        let a = false_position(0.0, 0.0, a_max, top_ascr, target, tol, |a| {
            ascr_at(&with_amp(a, omega0))
        })?;
        return Ok(with_amp(a, omega0));
    }
    let fastest = with_amp(a_max, MAX_OMEGA.max(omega0));
    let max_ascr = ascr_at(&fastest)?;
    if target > max_ascr + tol {
        return Err(WaveError::Unreachable {
            target,
            max: max_ascr,
        });
    }
    let omega = false_position(
        omega0,
        top_ascr,
        fastest.omega,
        max_ascr,
        target,
        tol,
        |w| ascr_at(&with_amp(a_max, w)),
    )?;
    Ok(with_amp(a_max, omega))
}

/// Illinois false-position search for `f(x) = target` on a bracket whose
/// endpoint values straddle the target; `f` is increasing.
fn false_position<F>(
    mut lo: f64,
    mut f_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    target: f64,
    tol: f64,
    mut f: F,
) -> Result<f64, WaveError>
where
    F: FnMut(f64) -> Result<f64, WaveError>,
{
    if (f_lo - target).abs() <= tol {
        return Ok(lo);
    }
    if (f_hi - target).abs() <= tol {
        return Ok(hi);
    }
    let mut side = 0i8;
    let mut best = (f64::INFINITY, hi);
    for _ in 0..100 {
        let (g_lo, g_hi) = (f_lo - target, f_hi - target);
        let x = lo - g_lo * (hi - lo) / (g_hi - g_lo);
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let g = f(x)? - target;
        if g.abs() < best.0 {
            best = (g.abs(), x);
        }
        if g.abs() <= tol {
            return Ok(x);
        }
        if g < 0.0 {
            lo = x;
            f_lo = g + target;
            if side == -1 {
                f_hi = target + 0.5 * (f_hi - target);
            }
            side = -1;
        } else {
            hi = x;
            f_hi = g + target;
            if side == 1 {
                f_lo = target + 0.5 * (f_lo - target);
            }
            side = 1;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(best.1)
}

/// Fraction of characterization frames whose receiver-plane spot speed
/// exceeds `threshold` (m/s).
pub fn fraction_spot_speed_above(
    params: &WaveParams,
    c: &OpticalConstants,
    threshold: f64,
) -> Result<f64, WaveError> {
    let offsets = simulate_offsets(params, c, CHARACTERIZATION_FRAMES, CHARACTERIZATION_FPS)?;
    let above = offsets
        .iter()
        .filter(|s| s.vx.hypot(s.vy) > threshold)
        .count();
    Ok(above as f64 / offsets.len() as f64)
}
