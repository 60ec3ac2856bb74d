//! Offset-to-BER link model, packet evaluation and run metrics.
//!
//! The beam is a circular Gaussian of width `spot_sigma` on the receiver
//! plane and the detector collects everything inside a disc of radius
//! `aperture_radius`. With thermal-limited square-law detection the
//! electrical SNR goes as the square of the collected fraction and OOK
//! errors follow `Q(sqrt(SNR))`. The boresight SNR is calibrated so the BER
//! crosses the FEC limit exactly at `fec_edge`.

use crate::geometry::SpotSample;
use libm::erfc;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    /// Gaussian sigma of the beam at the receiver (m).
    pub spot_sigma: f64,
    /// Effective collection radius including the coupling lens (m).
    pub aperture_radius: f64,
    /// Boresight electrical SNR; calibrated from `fec_edge` when absent.
    pub snr0_db: Option<f64>,
    /// bit/s
    pub data_rate: f64,
    pub symbols_per_packet: u64,
    pub packets_per_run: usize,
    pub fec_ber: f64,
    /// Radial offset at which the BER reaches `fec_ber` (m).
    pub fec_edge: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            spot_sigma: 1e-3,
            aperture_radius: 6e-3,
            snr0_db: None,
            data_rate: 1e9,
            symbols_per_packet: 10_000,
            packets_per_run: 100,
            fec_ber: 3.8e-3,
            fec_edge: 7e-3,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("spot_sigma", self.spot_sigma),
            ("aperture_radius", self.aperture_radius),
            ("data_rate", self.data_rate),
            ("fec_edge", self.fec_edge),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.symbols_per_packet == 0 || self.packets_per_run == 0 {
            return Err("symbols_per_packet and packets_per_run must be positive".into());
        }
        if !(self.fec_ber > 0.0 && self.fec_ber < 0.5) {
            return Err(format!(
                "fec_ber must lie in (0, 0.5), got {}",
                self.fec_ber
            ));
        }
        if let Some(db) = self.snr0_db {
            if !db.is_finite() {
                return Err("snr0_db must be finite".into());
            }
        }
        Ok(())
    }

    /// Duration of one packet (s).
    pub fn packet_duration(&self) -> f64 {
        self.symbols_per_packet as f64 / self.data_rate
    }
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Power of a unit circular Gaussian (sigma `sigma`, center at distance
/// `offset` from the aperture center) falling inside a disc of radius `radius`.
///
/// Polar quadrature about the aperture center: composite Simpson in radius,
/// trapezoid in angle over the half circle (the integrand is even in angle).
pub fn disc_capture(offset: f64, sigma: f64, radius: f64, n_rho: usize, n_theta: usize) -> f64 {
    let n_rho = n_rho + n_rho % 2;
    let h = radius / n_rho as f64;
    let dth = PI / n_theta as f64;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let cos_table: Vec<f64> = (0..=n_theta).map(|k| (k as f64 * dth).cos()).collect();
    let ring = |rho: f64| -> f64 {
        // integral over theta in [0, 2 pi) of the density, times rho
        let mut acc = 0.0;
        for (k, c) in cos_table.iter().enumerate() {
            let r2 = rho * rho + offset * offset - 2.0 * rho * offset * c;
            let w = if k == 0 || k == n_theta { 0.5 } else { 1.0 };
            acc += w * (-r2 * inv2s2).exp();
        }
        2.0 * acc * dth * rho
    };
    let mut sum = ring(0.0) + ring(radius);
    for i in 1..n_rho {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * ring(i as f64 * h);
    }
    (sum * h / 3.0) * inv2s2 / PI
}

const RHO_NODES: usize = 160;
const THETA_NODES: usize = 64;
const TABLE_STEP_SIGMAS: f64 = 0.02;
const TABLE_REACH_SIGMAS: f64 = 10.0;

/// Calibrated link: coupling table plus boresight SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub cfg: LinkConfig,
    /// Linear boresight SNR.
    pub snr0: f64,
    table_step: f64,
    table: Vec<f64>,
}

impl LinkModel {
    pub fn new(cfg: LinkConfig) -> Result<Self, String> {
        cfg.validate()?;
        let table_step = TABLE_STEP_SIGMAS * cfg.spot_sigma;
        let reach = cfg.aperture_radius + TABLE_REACH_SIGMAS * cfg.spot_sigma;
        let n = (reach / table_step).ceil() as usize + 1;
        let mut table: Vec<f64> = (0..n)
            .map(|i| {
                disc_capture(
                    i as f64 * table_step,
                    cfg.spot_sigma,
                    cfg.aperture_radius,
                    RHO_NODES,
                    THETA_NODES,
                )
                .clamp(0.0, 1.0)
            })
            .collect();
        // capture is nonincreasing in offset; quadrature noise must not reorder it
        for i in 1..table.len() {
            table[i] = table[i].min(table[i - 1]);
        }
        let mut model = Self {
            cfg,
            snr0: 1.0,
            table_step,
            table,
        };
        model.snr0 = match cfg.snr0_db {
            Some(db) => 10f64.powf(db / 10.0),
            None => model.calibrated_snr0(),
        };
        Ok(model)
    }

    pub fn snr0_db(&self) -> f64 {
        10.0 * self.snr0.log10()
    }

    /// Fraction of beam power collected at radial offset `offset` (m).
    pub fn coupled_fraction(&self, offset: f64) -> f64 {
        let r = offset.abs();
        if !r.is_finite() {
            return 0.0;
        }
        let u = r / self.table_step;
        let i = u.floor() as usize;
        if i + 1 >= self.table.len() {
            return 0.0;
        }
        let t = u - i as f64;
        self.table[i] * (1.0 - t) + self.table[i + 1] * t
    }

    pub fn ber_at_snr(snr: f64) -> f64 {
        q_function(snr.max(0.0).sqrt())
    }

    pub fn ber_ook(&self, offset: f64) -> f64 {
        let f = self.coupled_fraction(offset);
        Self::ber_at_snr(self.snr0 * f * f)
    }

    /// Boresight SNR putting the FEC crossing at `fec_edge`; bisection on the
    /// Q-function argument.
    pub fn calibrated_snr0(&self) -> f64 {
        let target = self.cfg.fec_ber;
        let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if q_function(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        let f = self.coupled_fraction(self.cfg.fec_edge);
        (x / f).powi(2)
    }

    /// Packet BER: time average of the instantaneous BER over the samples
    /// spanning the packet. Offsets are radial (m); `f64::INFINITY` marks an
    /// outage.
    pub fn eval_packet(&self, offsets: &[f64]) -> PacketResult {
        assert!(!offsets.is_empty(), "packet trace must be nonempty");
        let ber = offsets.iter().map(|&d| self.ber_ook(d)).sum::<f64>() / offsets.len() as f64;
        PacketResult::new(ber, self.cfg.fec_ber)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketResult {
    pub ber: f64,
    pub lost: bool,
}

impl PacketResult {
    pub fn new(ber: f64, fec_ber: f64) -> Self {
        Self {
            ber,
            lost: ber > fec_ber,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub mean_ber: f64,
    pub plr: f64,
    /// bit/s
    pub throughput: f64,
    pub offset_std_x: f64,
    pub offset_std_y: f64,
    pub offset_trace: Vec<SpotSample>,
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Throughput keeps the delivered share of the data rate.
pub fn throughput(data_rate: f64, plr: f64) -> f64 {
    data_rate * (1.0 - plr)
}

pub fn summarize_run(
    packets: &[PacketResult],
    offsets: Vec<SpotSample>,
    data_rate: f64,
) -> RunMetrics {
    let n = packets.len();
    let (plr, mean_ber) = if n == 0 {
        (0.0, 0.0)
    } else {
        let lost = packets.iter().filter(|p| p.lost).count();
        (
            lost as f64 / n as f64,
            packets.iter().map(|p| p.ber).sum::<f64>() / n as f64,
        )
    };
    RunMetrics {
        mean_ber,
        plr,
        throughput: throughput(data_rate, plr),
        offset_std_x: std_dev(offsets.iter().map(|s| s.x)),
        offset_std_y: std_dev(offsets.iter().map(|s| s.y)),
        offset_trace: offsets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LinkModel {
        LinkModel::new(LinkConfig::default()).unwrap()
    }

    #[test]
    fn q_of_three() {
        // erfc-based reference: Q(3) = 1.3498980316300945e-3
        assert!((q_function(3.0) - 1.349_898_031_630_094_5e-3).abs() < 1e-15);
        assert_eq!(q_function(0.0), 0.5);
    }

    #[test]
    fn capture_limits() {
        let m = model();
        assert!(m.coupled_fraction(0.0) > 1.0 - 1e-6);
        assert_eq!(m.coupled_fraction(1.0), 0.0);
        assert_eq!(m.coupled_fraction(f64::INFINITY), 0.0);
        // analytic on-axis value: 1 - exp(-a^2 / 2 sigma^2)
        let exact = 1.0 - (-18.0f64).exp();
        assert!((disc_capture(0.0, 1e-3, 6e-3, 160, 64) - exact).abs() < 1e-7);
    }

    #[test]
    fn edge_calibration() {
        let m = model();
        let edge = m.ber_ook(7e-3);
        assert!(((edge - 3.8e-3) / 3.8e-3).abs() < 1e-6);
        assert!(m.ber_ook(0.0) < 3.8e-3);
        assert!(m.ber_ook(10e-3) > 3.8e-3);
        let again = m.calibrated_snr0();
        assert!(((again - m.snr0) / m.snr0).abs() < 1e-6);
    }

    #[test]
    fn explicit_snr_skips_calibration() {
        let m = LinkModel::new(LinkConfig {
            snr0_db: Some(20.0),
            ..LinkConfig::default()
        })
        .unwrap();
        assert!((m.snr0 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn packets() {
        let m = model();
        let p = m.eval_packet(&[0.0; 5]);
        assert!(!p.lost);
        let p = m.eval_packet(&[0.03; 5]);
        assert!((p.ber - 0.5).abs() < 1e-12);
        assert!(p.lost);
        let trace = [0.0, 0.006, 0.0075, 0.012];
        let hand: f64 = trace.iter().map(|&d| m.ber_ook(d)).sum::<f64>() / 4.0;
        assert_eq!(m.eval_packet(&trace).ber, hand);
        let outage = m.eval_packet(&[f64::INFINITY]);
        assert!(outage.lost);
    }

    #[test]
    fn lost_iff_above_fec() {
        for ber in [0.0, 3.7e-3, 3.8e-3, 3.81e-3, 0.5] {
            assert_eq!(PacketResult::new(ber, 3.8e-3).lost, ber > 3.8e-3);
        }
    }

    #[test]
    fn run_summary() {
        let mut packets = vec![PacketResult::new(0.0, 3.8e-3); 85];
        packets.extend(vec![PacketResult::new(0.4, 3.8e-3); 15]);
        let r = summarize_run(&packets, vec![], 1e9);
        assert!((r.plr - 0.15).abs() < 1e-15);
        assert_eq!(r.throughput, 1e9 * (1.0 - r.plr));
        assert!((r.throughput - 850e6).abs() < 1e-3);

        let clean = vec![PacketResult::new(0.0, 3.8e-3); 100];
        let samples = vec![
            SpotSample {
                x: 0.002,
                y: -0.001,
                ..Default::default()
            };
            20
        ];
        let r = summarize_run(&clean, samples, 5e8);
        assert_eq!(r.throughput, 5e8);
        assert!(r.offset_std_x < 1e-15 && r.offset_std_y < 1e-15);
    }
}
