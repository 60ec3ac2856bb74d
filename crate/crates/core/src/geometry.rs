//! Refraction geometry at the water surface.
//!
//! A vertical beam leaving the water through a surface tilted by the slope
//! angle `gamma` is bent by Snell's law and lands on the receiver plane, a
//! distance `h` above the surface, displaced by
//!
//! ```text
//! d = h * tan(asin(n' * sin(gamma)) - gamma)
//! ```
//!
//! Everything here is a pure function of its arguments.

use thiserror::Error;

/// Air path from the water surface to the receiver plane (m).
pub const DEFAULT_AIR_PATH_M: f64 = 1.83;
/// Relative refractive index water/air for fresh water.
pub const DEFAULT_N_PRIME: f64 = 1.33;
/// Straight-line equivalent of the folded optical path (0.14 m water + 1.83 m air).
pub const DEFAULT_LEVER_M: f64 = 1.97;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("total internal reflection: n' * sin({gamma}) >= 1 for n' = {n_prime}")]
    TotalInternalReflection { gamma: f64, n_prime: f64 },
    #[error("offset {offset} m exceeds the largest attainable displacement {max} m")]
    NotInvertible { offset: f64, max: f64 },
    #[error("invalid optical constants: {0}")]
    InvalidConstants(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConstants {
    /// Air path length (m).
    pub h: f64,
    /// n_water / n_air.
    pub n_prime: f64,
}

impl Default for OpticalConstants {
    fn default() -> Self {
        Self {
            h: DEFAULT_AIR_PATH_M,
            n_prime: DEFAULT_N_PRIME,
        }
    }
}

impl OpticalConstants {
    pub fn new(h: f64, n_prime: f64) -> Result<Self> {
        let c = Self { h, n_prime };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(GeometryError::InvalidConstants(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.n_prime.is_finite() && self.n_prime > 1.0) {
            return Err(GeometryError::InvalidConstants(format!(
                "n_prime must exceed 1, got {}",
                self.n_prime
            )));
        }
        Ok(())
    }

    /// Slope angle at which the refracted ray grazes the surface.
    pub fn critical_angle(&self) -> f64 {
        (1.0 / self.n_prime).asin()
    }

    /// Supremum of |d| over the propagating domain, reached as gamma approaches
    /// the critical angle (the refracted ray then leaves at 90 degrees to the normal).
    pub fn max_displacement(&self) -> f64 {
        self.h * (std::f64::consts::FRAC_PI_2 - self.critical_angle()).tan()
    }
}

/// Instantaneous surface slopes at the beam crossing point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlopeState {
    pub f_x: f64,
    pub f_y: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
}

impl SlopeState {
    pub fn from_slopes(f_x: f64, f_y: f64) -> Self {
        Self {
            f_x,
            f_y,
            gamma_x: f_x.atan(),
            gamma_y: f_y.atan(),
        }
    }

    pub fn flat() -> Self {
        Self::default()
    }
}

/// Unit normal of the local tangent plane, pointing out of the water.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNormal {
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
}

impl SurfaceNormal {
    pub fn dot(&self, other: &SurfaceNormal) -> f64 {
        self.nx * other.nx + self.ny * other.ny + self.nz * other.nz
    }
}

/// Timestamped spot position and velocity on the receiver plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpotSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

fn snell_sine(gamma: f64, c: &OpticalConstants) -> Result<f64> {
    let s = c.n_prime * gamma.sin();
    if s.abs() >= 1.0 {
        return Err(GeometryError::TotalInternalReflection {
            gamma,
            n_prime: c.n_prime,
        });
    }
    Ok(s)
}

/// Wave-induced spot displacement on the receiver plane for slope angle `gamma`.
pub fn refract_displacement(gamma: f64, c: &OpticalConstants) -> Result<f64> {
    let s = snell_sine(gamma, c)?;
    Ok(c.h * (s.asin() - gamma).tan())
}

/// Closed-form time derivative of [`refract_displacement`] given the slope-angle
/// rate `gamma_rate` (rad/s).
pub fn spot_speed(gamma: f64, gamma_rate: f64, c: &OpticalConstants) -> Result<f64> {
    let s = snell_sine(gamma, c)?;
    let deviation = s.asin() - gamma;
    let cos_dev = deviation.cos();
    let gain = c.n_prime * gamma.cos() / (1.0 - s * s).sqrt() - 1.0;
    Ok(c.h / (cos_dev * cos_dev) * gain * gamma_rate)
}

pub fn surface_normal(f_x: f64, f_y: f64) -> SurfaceNormal {
    let norm = (f_x * f_x + f_y * f_y + 1.0).sqrt();
    SurfaceNormal {
        nx: -f_x / norm,
        ny: -f_y / norm,
        nz: 1.0 / norm,
    }
}

/// Angle between two surface normals, in [0, pi].
pub fn slope_change(n1: &SurfaceNormal, n2: &SurfaceNormal) -> f64 {
    n1.dot(n2).clamp(-1.0, 1.0).acos()
}

/// Slope angle whose refraction displacement equals `d`.
///
/// Bisection on `[0, critical_angle)`, using that the displacement is odd and
/// strictly increasing. Iterates until the bracket stops shrinking, which is
/// well below 1e-12 rad.
pub fn invert_displacement(d: f64, c: &OpticalConstants) -> Result<f64> {
    let max = c.max_displacement();
    if !d.is_finite() || d.abs() >= max {
        return Err(GeometryError::NotInvertible { offset: d, max });
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    let target = d.abs();
    let (mut lo, mut hi) = (0.0_f64, c.critical_angle());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match refract_displacement(mid, c) {
            Ok(v) if v < target => lo = mid,
            _ => hi = mid,
        }
    }
    let gamma = 0.5 * (lo + hi);
    Ok(gamma.copysign(d))
}

/// Surface slopes `(f_x, f_y)` that explain a measured spot offset.
pub fn slopes_from_offset(d_x: f64, d_y: f64, c: &OpticalConstants) -> Result<(f64, f64)> {
    let gx = invert_displacement(d_x, c)?;
    let gy = invert_displacement(d_y, c)?;
    Ok((gx.tan(), gy.tan()))
}

/// Receiver-plane spot position for a mirror tilt and a surface slope.
///
/// Mirror tilt deflects the beam by twice its angle; the lateral walk is
/// `lever * 2 * tilt` in the small-angle model. The refraction displacement
/// adds on top per axis.
pub fn beam_to_plane(
    tilt_x: f64,
    tilt_y: f64,
    slope: &SlopeState,
    c: &OpticalConstants,
    lever: f64,
) -> Result<(f64, f64)> {
    let x = lever * 2.0 * tilt_x + refract_displacement(slope.gamma_x, c)?;
    let y = lever * 2.0 * tilt_y + refract_displacement(slope.gamma_y, c)?;
    Ok((x, y))
}
