//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use beamtrack::control::{AxisControllerState, ControlConfig};
use beamtrack::geometry::{refract_displacement, spot_speed, OpticalConstants, SpotSample};
use beamtrack::harness::{cmd_run, RunOptions};
use beamtrack::imaging::{locate_spot, render_frame, PipelineConfig};
use beamtrack::link::{LinkConfig, LinkModel};
use beamtrack::sim::{RunOutput, ScenarioConfig, Simulator, SystemConfig};
use beamtrack::wave::{calibrate_wave, measure_ascr, WaveParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

fn simulator() -> Simulator {
    Simulator::new(SystemConfig::default()).expect("default system is valid")
}

fn scenario(
    wave: Option<WaveParams>,
    rx_speed: f64,
    tracking: bool,
    data_rate: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        wave,
        rx_speed,
        tracking,
        data_rate,
        duration: 10.0,
        seed: 2024,
        ..ScenarioConfig::default()
    }
}

fn radial_std(out: &RunOutput) -> f64 {
    out.metrics.offset_std_x.hypot(out.metrics.offset_std_y)
}

fn spot_speed_matches_finite_difference() -> Outcome {
    let c = OpticalConstants::default();
    let start = Instant::now();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for gamma in linspace(-0.7, 0.7, 100) {
        let slope = (refract_displacement(gamma + h, &c).unwrap()
            - refract_displacement(gamma - h, &c).unwrap())
            / (2.0 * h);
        for rate in linspace(-5.0, 5.0, 100) {
            let analytic = spot_speed(gamma, rate, &c).unwrap();
            let numeric = slope * rate;
            worst = worst.max(((analytic - numeric) / numeric).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-6 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e}, {elapsed:?}"),
    )
}

/// Angle between two surface normals via atan2 of cross and dot products.
fn normal_angle(f1: (f64, f64), f2: (f64, f64)) -> f64 {
    let n = |(fx, fy): (f64, f64)| {
        let norm = (fx * fx + fy * fy + 1.0).sqrt();
        [-fx / norm, -fy / norm, 1.0 / norm]
    };
    let (a, b) = (n(f1), n(f2));
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

fn ascr_matches_brute_force() -> Outcome {
    let c = OpticalConstants::default();
    let start = Instant::now();
    let tau = 1.0 / 220.0;
    let slope_at = |t: f64| {
        (
            0.05 * (std::f64::consts::TAU * 1.3 * t).sin(),
            0.03 * (std::f64::consts::TAU * 0.7 * t + 0.4).sin(),
        )
    };
    let slopes: Vec<(f64, f64)> = (0..10_000).map(|i| slope_at(i as f64 * tau)).collect();
    let brute = slopes
        .windows(2)
        .map(|w| normal_angle(w[0], w[1]) / tau)
        .sum::<f64>()
        / (slopes.len() - 1) as f64;
    let offsets: Vec<SpotSample> = slopes
        .iter()
        .enumerate()
        .map(|(i, &(fx, fy))| SpotSample {
            t: i as f64 * tau,
            x: refract_displacement(fx.atan(), &c).unwrap(),
            y: refract_displacement(fy.atan(), &c).unwrap(),
            ..SpotSample::default()
        })
        .collect();
    let measured = measure_ascr(&offsets, &c).map_err(|e| e.to_string())?.ascr;
    let rel = ((measured - brute) / brute).abs();
    let elapsed = start.elapsed();
    check(
        rel < 1e-3 && elapsed < Duration::from_secs(5),
        format!(
            "measured {measured:.6} vs oracle {brute:.6} rad/s, relative {rel:.1e}, {elapsed:?}"
        ),
    )
}

fn coupling_anchor() -> Outcome {
    let m = LinkModel::new(LinkConfig::default())?;
    let (b0, b7, b10) = (m.ber_ook(0.0), m.ber_ook(7e-3), m.ber_ook(10e-3));
    let rel = ((b7 - 3.8e-3) / 3.8e-3).abs();
    check(
        b0 < 3.8e-3 && rel < 1e-6 && b10 > 3.8e-3,
        format!("BER(0) {b0:.2e}, BER(7 mm) {b7:.6e} (rel {rel:.1e}), BER(10 mm) {b10:.2e}"),
    )
}

fn adaptive_gain_suite() -> Outcome {
    let cfg = ControlConfig::default();
    let state = |s: f64, d_prev: f64, p1: f64, p2: f64, q: f64| AxisControllerState {
        s,
        d_prev,
        p1,
        p2,
        q,
        alpha: 0.1,
        ..AxisControllerState::new(&cfg, 0.25)
    };
    let (_, a) = state(1.5, 0.02, 0.01, 0.02, 3.0).adapt_gain(-0.02, 0.0);
    let (_, b) = state(1.5, 0.03, 0.01, 0.02, 3.0).adapt_gain(0.03, 0.0);
    let (_, c) = state(1.05, 0.02, 0.01, 0.02, 3.0).adapt_gain(-0.02, 0.0);
    let (kp, d) = state(1.7, 0.0, 0.01, 0.02, 3.0).adapt_gain(0.0, 0.0);
    let examples = [
        a.s == 1.4,
        b.s == 1.6,
        c.s == 1.0,
        d.s == 1.7 && kp == 1.7 * 0.25,
    ];
    if !examples.iter().all(|&ok| ok) {
        return Err(format!(
            "examples {examples:?}: s = {}, {}, {}, {}",
            a.s, b.s, c.s, d.s
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut st = AxisControllerState::new(&cfg, 0.25);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let x_c = rng.random_range(-0.05..0.05);
        let x_i = rng.random_range(-0.01..0.01);
        st = st.adapt_gain(x_c, x_i).1;
        lo = lo.min(st.s);
        hi = hi.max(st.s);
    }
    check(
        lo >= 1.0 && hi <= st.q,
        format!(
            "four examples exact; fuzz s range [{lo:.2}, {hi:.2}] with q = {}",
            st.q
        ),
    )
}

fn imaging_round_trip() -> Outcome {
    let cfg = PipelineConfig {
        noise_sigma: 0.0,
        ..PipelineConfig::default()
    };
    let px_per_m = cfg.resize_to as f64 / cfg.window_m;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errors = Vec::new();
    let mut misses = 0;
    for i in 0..1000 {
        let center = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let peak = rng.random_range(100.0..255.0);
        let frame = render_frame(center, cfg.spot_sigma, peak, &cfg, i);
        match locate_spot(&frame, &cfg) {
            Some((x, y)) => errors.push((x - center.0).hypot(y - center.1) * px_per_m),
            None => misses += 1,
        }
    }
    errors.sort_by(f64::total_cmp);
    let median = errors
        .get(errors.len() / 2)
        .copied()
        .unwrap_or(f64::INFINITY);
    check(
        median < 0.3 && misses == 0,
        format!("median error {median:.4} px, {misses} misses out of 1000"),
    )
}

fn moving_receiver_trend() -> Outcome {
    let sim = simulator();
    let start = Instant::now();
    let runs = sim.sweep(&[
        scenario(None, 1.0, true, 1e9),
        scenario(None, 1.0, false, 1e9),
    ]);
    let per_run = start.elapsed() / 2;
    let (on, off) = match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err("run failed".into()),
    };
    let max_on = on
        .trace
        .samples
        .iter()
        .map(|s| s.x.hypot(s.y))
        .fold(0.0, f64::max);
    let xs = off.trace.samples.iter().map(|s| s.x);
    let (lo, hi) = xs.fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let ok = max_on < 0.01
        && on.metrics.plr < 0.10
        && lo <= -0.099
        && hi >= 0.099
        && off.metrics.plr > 0.80
        && per_run < Duration::from_secs(30);
    check(
        ok,
        format!(
            "tracked max |offset| {:.2} mm, PLR {:.2}; untracked span [{:.1}, {:.1}] cm, PLR {:.2}; {per_run:?} per run",
            max_on * 1e3,
            on.metrics.plr,
            lo * 100.0,
            hi * 100.0,
            off.metrics.plr
        ),
    )
}

fn tracked_speed_ceiling() -> Outcome {
    let sim = simulator();
    let speeds = [0.5, 1.0, 1.5];
    let cfgs: Vec<_> = speeds
        .iter()
        .map(|&v| scenario(None, v, true, 1e9))
        .collect();
    let mut plrs = Vec::new();
    for r in sim.sweep(&cfgs) {
        plrs.push(r.map_err(|e| e.to_string())?.metrics.plr);
    }
    check(
        plrs.iter().all(|&p| p < 0.10),
        format!("PLR at {speeds:?} m/s: {plrs:?}"),
    )
}

fn wave_trend() -> Outcome {
    let c = OpticalConstants::default();
    let targets = [0.0963, 0.2344, 0.5155];
    let mut cfgs = Vec::new();
    for &t in &targets {
        let wave = calibrate_wave(t, 1e-4, &c).map_err(|e| e.to_string())?;
        cfgs.push(scenario(Some(wave), 0.0, true, 1e9));
        cfgs.push(scenario(Some(wave), 0.0, false, 1e9));
    }
    let outs = simulator()
        .sweep(&cfgs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let std_on: Vec<f64> = outs.iter().step_by(2).map(radial_std).collect();
    let std_off: Vec<f64> = outs.iter().skip(1).step_by(2).map(radial_std).collect();
    let plr_on: Vec<f64> = outs.iter().step_by(2).map(|o| o.metrics.plr).collect();
    let lower = std_on.iter().zip(&std_off).all(|(a, b)| a < b);
    let increasing = std_off.windows(2).all(|w| w[1] > w[0]);
    let plr_ok = plr_on.iter().all(|&p| p <= 0.20) && plr_on[0] == 0.0;
    let mm = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:.2}", x * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    };
    check(
        lower && increasing && plr_ok,
        format!(
            "std tracked {} mm vs untracked {} mm; tracked PLR {plr_on:?}",
            mm(&std_on),
            mm(&std_off)
        ),
    )
}

fn combined_throughput() -> Outcome {
    let c = OpticalConstants::default();
    let wave = calibrate_wave(0.0963, 1e-4, &c).map_err(|e| e.to_string())?;
    let rates = [50e6, 100e6, 200e6, 400e6, 600e6, 850e6, 1000e6];
    let mut cfgs = Vec::new();
    for &r in &rates {
        cfgs.push(scenario(Some(wave), 1.0, true, r));
        cfgs.push(scenario(Some(wave), 1.0, false, r));
    }
    let outs = simulator()
        .sweep(&cfgs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let exact = outs
        .iter()
        .zip(&cfgs)
        .all(|(o, c)| o.metrics.throughput == c.data_rate * (1.0 - o.metrics.plr));
    let (best, _) = (0..rates.len())
        .map(|i| (i, outs[2 * i].metrics.throughput))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let on = outs[2 * best].metrics.throughput;
    let off = outs[2 * best + 1].metrics.throughput;
    check(
        exact && on >= 5.0 * off,
        format!(
            "best rate {} Mbit/s: tracked {:.1} vs untracked {:.1} Mbit/s; throughput identity exact: {exact}",
            rates[best] / 1e6,
            on / 1e6,
            off / 1e6
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[scenario]\ndata_rate = 1e9\nrx_speed = 1.0\nduration = 2.0\nseed = 99\nwave = { target_ascr = 0.2344 }\n",
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("m{i}.csv"));
        let trace = dir.path().join(format!("t{i}.csv"));
        let opts = RunOptions {
            trace: Some(trace.clone()),
            ..RunOptions::default()
        };
        cmd_run(&config, &out, &opts).map_err(|e| e.to_string())?;
        files.push((std::fs::read(out).unwrap(), std::fs::read(trace).unwrap()));
    }
    check(
        files[0] == files[1] && !files[0].1.is_empty(),
        format!(
            "metrics {} bytes, trace {} bytes, identical: {}",
            files[0].0.len(),
            files[0].1.len(),
            files[0] == files[1]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "1 spot speed vs finite difference",
            spot_speed_matches_finite_difference,
        ),
        ("2 ASCR oracle equivalence", ascr_matches_brute_force),
        ("3 coupling anchor", coupling_anchor),
        ("4 adaptive gain suite", adaptive_gain_suite),
        ("5 imaging round trip", imaging_round_trip),
        ("6 moving receiver trend", moving_receiver_trend),
        ("7 tracked speed ceiling", tracked_speed_ceiling),
        ("8 wave trend", wave_trend),
        ("9 combined throughput", combined_throughput),
        ("10 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} ({secs:.2} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} ({secs:.2} s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
