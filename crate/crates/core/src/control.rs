//! Per-axis adaptive controller and the MEMS mirror actuator.
//!
//! The proportional coefficient is `s * k`, where the scale `s` is nudged by
//! `alpha` each frame: down when the offset flips sign with both samples above
//! `p1` (overshoot), up when two same-sign samples both exceed `p2`
//! (sluggish). `s` stays in `[1, q]`.
//!
//! The controller output is a tilt increment; integral and derivative terms
//! are optional.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mechanical tilt limit of the mirror, 2.7 degrees.
pub const DEFAULT_TILT_LIMIT: f64 = 2.7 * std::f64::consts::PI / 180.0;
/// Delay between a tilt command and the mirror holding the new tilt (s).
pub const DEFAULT_SETTLE: f64 = 0.002;
/// Slack when comparing simulated instants (s).
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("time went backwards: advance({requested}) after {last}")]
    TimeRegression { last: f64, requested: f64 },
}

/// Tunables shared by both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub alpha: f64,
    /// Oscillation threshold (m).
    pub p1: f64,
    /// Sluggishness threshold (m).
    pub p2: f64,
    pub q: f64,
    pub s_init: f64,
    /// Integral gain, rad/(m s).
    pub k_i: f64,
    /// Derivative gain, rad s/m.
    pub k_d: f64,
    /// Anti-windup bound on the accumulated error (m s).
    pub integ_max: f64,
    pub tilt_limit: f64,
    pub settle: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            p1: 0.005,
            p2: 0.010,
            q: 3.0,
            s_init: 1.0,
            k_i: 18.0,
            k_d: 0.0,
            integ_max: 1e-3,
            tilt_limit: DEFAULT_TILT_LIMIT,
            settle: DEFAULT_SETTLE,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.p1 > 0.0 && self.p2 > 0.0) {
            return Err("p1 and p2 must be positive".into());
        }
        if !(self.q > 1.0) {
            return Err(format!("q must exceed 1, got {}", self.q));
        }
        if !(self.s_init >= 1.0 && self.s_init <= self.q) {
            return Err(format!("s_init must lie in [1, q], got {}", self.s_init));
        }
        if !(self.k_i >= 0.0 && self.k_d >= 0.0 && self.integ_max >= 0.0) {
            return Err("k_i, k_d and integ_max must be nonnegative".into());
        }
        if !(self.tilt_limit > 0.0) {
            return Err(format!(
                "tilt_limit must be positive, got {}",
                self.tilt_limit
            ));
        }
        if !(self.settle >= 0.0) {
            return Err(format!("settle must be nonnegative, got {}", self.settle));
        }
        Ok(())
    }
}

/// Base proportional coefficient for a lever-arm plant: one unit of
/// proportional action cancels the observed offset.
pub fn base_gain(lever: f64) -> f64 {
    1.0 / (2.0 * lever)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisControllerState {
    /// Gain scale.
    pub s: f64,
    /// Base proportional coefficient (rad/m).
    pub k: f64,
    /// Offset seen in the previous frame (m).
    pub d_prev: f64,
    pub alpha: f64,
    pub p1: f64,
    pub p2: f64,
    pub q: f64,
    /// Accumulated error (m s).
    pub integ: f64,
    pub k_i: f64,
    pub k_d: f64,
    pub integ_max: f64,
    /// Error used by the derivative term on the previous call.
    pub d_last: f64,
}

impl AxisControllerState {
    pub fn new(cfg: &ControlConfig, k: f64) -> Self {
        Self {
            s: cfg.s_init,
            k,
            d_prev: 0.0,
            alpha: cfg.alpha,
            p1: cfg.p1,
            p2: cfg.p2,
            q: cfg.q,
            integ: 0.0,
            k_i: cfg.k_i,
            k_d: cfg.k_d,
            integ_max: cfg.integ_max,
            d_last: 0.0,
        }
    }

    pub fn k_p(&self) -> f64 {
        self.s * self.k
    }

    /// One frame of gain adaptation for spot coordinate `x_c` and target `x_i`.
    /// Returns the proportional coefficient and the updated state.
    pub fn adapt_gain(mut self, x_c: f64, x_i: f64) -> (f64, Self) {
        let d = x_c - x_i;
        if d * self.d_prev < 0.0 {
            if d.abs() > self.p1 && self.d_prev.abs() > self.p1 {
                self.s -= self.alpha;
            }
        } else if d.abs() > self.p2 && self.d_prev.abs() > self.p2 {
            self.s += self.alpha;
        }
        if self.s < 1.0 {
            self.s = 1.0;
        } else if self.s > self.q {
            self.s -= self.alpha;
        }
        self.d_prev = d;
        (self.k_p(), self)
    }

    /// Tilt increment for offset `d` after `dt` seconds. Positive offsets give
    /// negative steering.
    pub fn pid_command(mut self, d: f64, dt: f64) -> (f64, Self) {
        debug_assert!(dt > 0.0);
        self.integ = (self.integ + d * dt).clamp(-self.integ_max, self.integ_max);
        let deriv = (d - self.d_last) / dt;
        self.d_last = d;
        let out = -(self.k_p() * d + self.k_i * self.integ + self.k_d * deriv);
        (out, self)
    }

    /// Adapt the gain, then compute the tilt increment.
    pub fn update(self, x_c: f64, x_i: f64, dt: f64) -> (f64, Self) {
        let (_, st) = self.adapt_gain(x_c, x_i);
        st.pid_command(x_c - x_i, dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingTilt {
    pub tilt: (f64, f64),
    pub apply_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorState {
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub pending: Option<PendingTilt>,
    pub limit: f64,
    pub settle: f64,
    last_t: f64,
}

impl MirrorState {
    pub fn new(limit: f64, settle: f64) -> Self {
        Self {
            tilt_x: 0.0,
            tilt_y: 0.0,
            pending: None,
            limit,
            settle,
            last_t: f64::NEG_INFINITY,
        }
    }

    pub fn from_config(cfg: &ControlConfig) -> Self {
        Self::new(cfg.tilt_limit, cfg.settle)
    }

    pub fn tilt(&self) -> (f64, f64) {
        (self.tilt_x, self.tilt_y)
    }

    /// Queue a clamped tilt target, applied `settle` seconds after `now`.
    /// A newer command replaces one still pending.
    pub fn command_mirror(mut self, target: (f64, f64), now: f64) -> Self {
        let clamp = |v: f64| v.clamp(-self.limit, self.limit);
        self.pending = Some(PendingTilt {
            tilt: (clamp(target.0), clamp(target.1)),
            apply_at: now + self.settle,
        });
        self
    }

    /// Move the mirror clock to `t`, applying a due pending command.
    pub fn advance(mut self, t: f64) -> Result<Self, ControlError> {
        if t < self.last_t - TIME_EPS {
            return Err(ControlError::TimeRegression {
                last: self.last_t,
                requested: t,
            });
        }
        self.last_t = self.last_t.max(t);
        if let Some(p) = self.pending {
            if t >= p.apply_at - TIME_EPS {
                self.tilt_x = p.tilt.0;
                self.tilt_y = p.tilt.1;
                self.pending = None;
            }
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEFAULT_LEVER_M;

    fn state(s: f64, d_prev: f64) -> AxisControllerState {
        let mut st = AxisControllerState::new(&ControlConfig::default(), 0.25);
        st.s = s;
        st.d_prev = d_prev;
        st
    }

    #[test]
    fn overshoot_lowers_the_scale() {
        let mut st = state(1.5, 0.02);
        st.p1 = 0.01;
        let (kp, st) = st.adapt_gain(-0.02, 0.0);
        assert!((st.s - 1.4).abs() < 1e-12);
        assert!((kp - 1.4 * 0.25).abs() < 1e-12);
        assert_eq!(st.d_prev, -0.02);
    }

    #[test]
    fn sluggish_response_raises_the_scale() {
        let mut st = state(1.5, 0.03);
        st.p2 = 0.02;
        let (_, st) = st.adapt_gain(0.03, 0.0);
        assert!((st.s - 1.6).abs() < 1e-12);
    }

    #[test]
    fn scale_floor() {
        let mut st = state(1.05, 0.02);
        st.p1 = 0.01;
        let (_, st) = st.adapt_gain(-0.02, 0.0);
        assert_eq!(st.s, 1.0);
    }

    #[test]
    fn scale_ceiling_steps_back() {
        let mut st = state(3.0, 0.05);
        st.q = 3.0;
        let (_, st) = st.adapt_gain(0.05, 0.0);
        assert!((st.s - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quiet_offsets_leave_the_scale_alone() {
        let st = state(1.7, 0.0);
        let (kp, st2) = st.adapt_gain(0.0, 0.0);
        assert_eq!(st2.s, 1.7);
        assert_eq!(kp, 1.7 * 0.25);
    }

    #[test]
    fn pure_proportional_output() {
        let mut st = AxisControllerState::new(
            &ControlConfig {
                k_i: 0.0,
                k_d: 0.0,
                ..ControlConfig::default()
            },
            2.0,
        );
        st.s = 1.0;
        let (out, _) = st.pid_command(0.01, 0.007);
        assert!((out + 0.02).abs() < 1e-15);
        let (out, _) = st.pid_command(-0.01, 0.007);
        assert!(out > 0.0);
    }

    #[test]
    fn zero_history_gives_zero_output() {
        let mut st = AxisControllerState::new(&ControlConfig::default(), 0.25);
        for _ in 0..10 {
            let (out, next) = st.update(0.0, 0.0, 0.007);
            assert_eq!(out, 0.0);
            st = next;
        }
    }

    #[test]
    fn integral_is_clamped() {
        let mut st = AxisControllerState::new(&ControlConfig::default(), 0.25);
        for _ in 0..10_000 {
            st = st.pid_command(0.5, 0.007).1;
        }
        assert_eq!(st.integ, st.integ_max);
    }

    /// Static lever plant: a mirror tilt walks the spot by 2 * lever * tilt.
    fn step_response(initial: f64, cycles: usize) -> Vec<f64> {
        let cfg = ControlConfig::default();
        let mut st = AxisControllerState::new(&cfg, base_gain(DEFAULT_LEVER_M));
        let mut tilt = 0.0;
        let mut out = Vec::new();
        for _ in 0..cycles {
            let offset = initial + 2.0 * DEFAULT_LEVER_M * tilt;
            out.push(offset);
            let (delta, next) = st.update(offset, 0.0, 0.007);
            st = next;
            tilt = (tilt + delta).clamp(-cfg.tilt_limit, cfg.tilt_limit);
        }
        out
    }

    #[test]
    fn step_offset_decays_within_five_cycles() {
        let seq = step_response(0.005, 12);
        assert!(seq[5].abs() < 0.1 * 0.005, "{seq:?}");
        assert!(seq.iter().all(|d| d.abs() <= 0.005 + 1e-15));
    }

    #[test]
    fn mirror_clamps_and_settles() {
        let m = MirrorState::new(0.04712, 0.002);
        let m = m.command_mirror((0.06, -0.01), 1.0);
        assert_eq!(m.pending.unwrap().tilt, (0.04712, -0.01));
        let early = m.advance(1.0 + 0.0019).unwrap();
        assert_eq!(early.tilt(), (0.0, 0.0));
        let done = early.advance(1.0 + 0.002).unwrap();
        assert_eq!(done.tilt(), (0.04712, -0.01));
        assert!(done.pending.is_none());
    }

    #[test]
    fn mirror_rejects_time_regression() {
        let m = MirrorState::new(0.05, 0.002).advance(1.0).unwrap();
        assert!(matches!(
            m.advance(0.5),
            Err(ControlError::TimeRegression { .. })
        ));
        assert_eq!(m.advance(1.0).unwrap(), m);
    }

    #[test]
    fn later_command_replaces_pending() {
        let m = MirrorState::new(0.05, 0.002)
            .command_mirror((0.01, 0.0), 0.0)
            .command_mirror((0.02, 0.0), 0.001);
        let m = m.advance(0.0025).unwrap();
        assert_eq!(m.tilt(), (0.0, 0.0));
        let m = m.advance(0.003).unwrap();
        assert_eq!(m.tilt(), (0.02, 0.0));
    }

    #[test]
    fn advance_without_pending_is_identity() {
        let m = MirrorState::new(0.05, 0.002).advance(0.1).unwrap();
        assert_eq!(m.advance(0.2).unwrap().tilt(), m.tilt());
    }

    #[test]
    fn default_tilt_limit() {
        assert!((DEFAULT_TILT_LIMIT - 0.047_123_889_8).abs() < 1e-9);
    }
}
