//! Synthetic camera frames and the spot-location pipeline.
//!
//! Plane coordinates are meters with the origin at the frame center. Pixel
//! `(i, j)` (column, row) has its center at
//! `((i + 0.5) / px_per_m_x - width / (2 px_per_m_x), ...)`.
//!
//! Pipeline: bilinear resize to 100x100, threshold at a fraction of the peak,
//! morphological opening, then the heaviest 8-connected blob's
//! intensity-weighted centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{self, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Native camera resolution (square, px).
    pub native_px: usize,
    /// Side of the observed receiver-plane window (m).
    pub window_m: f64,
    /// Processing resolution (square, px).
    pub resize_to: usize,
    pub threshold_frac: f64,
    /// Opening structuring element radius; side is `2r + 1`.
    pub open_kernel: usize,
    pub min_area: usize,
    /// Additive render noise std (intensity units).
    pub noise_sigma: f64,
    /// Gaussian sigma of the retroreflected spot as seen by the camera (m).
    pub spot_sigma: f64,
    pub peak: f64,
    /// Camera-plane offset per receiver-plane offset.
    pub camera_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            native_px: 200,
            window_m: 0.24,
            resize_to: 100,
            threshold_frac: 0.20,
            open_kernel: 1,
            min_area: 4,
            noise_sigma: 2.0,
            spot_sigma: 0.005,
            peak: 200.0,
            camera_scale: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.native_px == 0 || self.resize_to == 0 {
            return Err("frame sizes must be positive".into());
        }
        if !(self.window_m > 0.0) {
            return Err(format!("window_m must be positive, got {}", self.window_m));
        }
        if !(self.threshold_frac > 0.0 && self.threshold_frac < 1.0) {
            return Err(format!(
                "threshold_frac must lie in (0, 1), got {}",
                self.threshold_frac
            ));
        }
        if self.min_area < 1 {
            return Err("min_area must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            ));
        }
        if !(self.spot_sigma > 0.0) {
            return Err(format!(
                "spot_sigma must be positive, got {}",
                self.spot_sigma
            ));
        }
        if !(self.peak >= 0.0 && self.peak <= 255.0) {
            return Err(format!("peak must lie in [0, 255], got {}", self.peak));
        }
        if !(self.camera_scale > 0.0) {
            return Err(format!(
                "camera_scale must be positive, got {}",
                self.camera_scale
            ));
        }
        Ok(())
    }

    pub fn native_px_per_m(&self) -> f64 {
        self.native_px as f64 / self.window_m
    }
}

/// Single-channel intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub px_per_m_x: f64,
    pub px_per_m_y: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, px_per_m: f64) -> Self {
        Self::filled(width, height, px_per_m, 0.0)
    }

    pub fn filled(width: usize, height: usize, px_per_m: f64, value: f32) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            px_per_m_x: px_per_m,
            px_per_m_y: px_per_m,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn peak(&self) -> f32 {
        self.pixels
            .iter()
            .cloned()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    /// Plane coordinates (m) of a continuous pixel position.
    pub fn pixel_to_plane(&self, px: f64, py: f64) -> (f64, f64) {
        (
            (px + 0.5 - 0.5 * self.width as f64) / self.px_per_m_x,
            (py + 0.5 - 0.5 * self.height as f64) / self.px_per_m_y,
        )
    }

    pub fn plane_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.px_per_m_x + 0.5 * self.width as f64 - 0.5,
            y * self.px_per_m_y + 0.5 * self.height as f64 - 0.5,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Detected spot: sub-pixel centroid and pixel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub area: usize,
}

/// Render an isotropic Gaussian spot at `center` (m) into a native-resolution
/// frame, with seeded additive noise.
pub fn render_frame(
    center: (f64, f64),
    spot_sigma: f64,
    peak: f64,
    cfg: &PipelineConfig,
    seed: u64,
) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render_frame_with(center, spot_sigma, peak, cfg, &mut rng)
}

pub fn render_frame_with<R: Rng + ?Sized>(
    center: (f64, f64),
    spot_sigma: f64,
    peak: f64,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Frame {
    assert!(spot_sigma > 0.0, "spot_sigma must be positive");
    let n = cfg.native_px;
    let mut frame = Frame::new(n, n, cfg.native_px_per_m());
    let (cx, cy) = frame.plane_to_pixel(center.0, center.1);
    let sigma_px_x = spot_sigma * frame.px_per_m_x;
    let sigma_px_y = spot_sigma * frame.px_per_m_y;
    // separable Gaussian; a far off-frame center underflows to a dark frame
    let profile = |len: usize, c: f64, s: f64| -> Vec<f64> {
        (0..len)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * s * s)).exp()
            })
            .collect()
    };
    let gx = profile(n, cx, sigma_px_x);
    let gy = profile(n, cy, sigma_px_y);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).unwrap());
    for (j, wy) in gy.iter().enumerate() {
        for (i, wx) in gx.iter().enumerate() {
            let mut v = peak * wx * wy;
            if let Some(dist) = &noise {
                v += dist.sample(rng);
            }
            frame.set(i, j, v.clamp(0.0, 255.0) as f32);
        }
    }
    frame
}

/// Bilinear resample to `cfg.resize_to` square, keeping the plane mapping exact.
pub fn preprocess(f: &Frame, cfg: &PipelineConfig) -> Frame {
    resize_bilinear(f, cfg.resize_to, cfg.resize_to)
}

pub fn resize_bilinear(f: &Frame, width: usize, height: usize) -> Frame {
    let sx = f.width as f64 / width as f64;
    let sy = f.height as f64 / height as f64;
    let mut out = Frame {
        width,
        height,
        pixels: vec![0.0; width * height],
        px_per_m_x: f.px_per_m_x / sx,
        px_per_m_y: f.px_per_m_y / sy,
    };
    let taps = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let u = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, u - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|i| taps(i, sx, f.width)).collect();
    for j in 0..height {
        let (y0, y1, ty) = taps(j, sy, f.height);
        for (i, &(x0, x1, tx)) in cols.iter().enumerate() {
            let top = f.get(x0, y0) as f64 * (1.0 - tx) + f.get(x1, y0) as f64 * tx;
            let bottom = f.get(x0, y1) as f64 * (1.0 - tx) + f.get(x1, y1) as f64 * tx;
            out.set(i, j, (top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

/// Pixels strictly brighter than `threshold_frac` of the frame peak.
pub fn adaptive_threshold(f: &Frame, threshold_frac: f64) -> Mask {
    let mut mask = Mask::empty(f.width, f.height);
    let peak = f.peak();
    if !(peak > 0.0) {
        return mask;
    }
    let level = threshold_frac * peak as f64;
    for (b, &p) in mask.bits.iter_mut().zip(&f.pixels) {
        *b = p as f64 > level;
    }
    mask
}

fn sweep_rows(m: &Mask, r: usize, erode: bool) -> Mask {
    let mut out = Mask::empty(m.width, m.height);
    for y in 0..m.height {
        for x in 0..m.width {
            let lo = x as isize - r as isize;
            let hi = x + r;
            let v = if erode {
                lo >= 0 && hi < m.width && (lo as usize..=hi).all(|k| m.get(k, y))
            } else {
                (lo.max(0) as usize..=hi.min(m.width - 1)).any(|k| m.get(k, y))
            };
            out.set(x, y, v);
        }
    }
    out
}

fn sweep_cols(m: &Mask, r: usize, erode: bool) -> Mask {
    let mut out = Mask::empty(m.width, m.height);
    for y in 0..m.height {
        let lo = y as isize - r as isize;
        let hi = y + r;
        for x in 0..m.width {
            let v = if erode {
                lo >= 0 && hi < m.height && (lo as usize..=hi).all(|k| m.get(x, k))
            } else {
                (lo.max(0) as usize..=hi.min(m.height - 1)).any(|k| m.get(x, k))
            };
            out.set(x, y, v);
        }
    }
    out
}

/// Binary erosion with a `(2r+1)^2` square; pixels outside the image count as background.
pub fn erode(m: &Mask, r: usize) -> Mask {
    sweep_cols(&sweep_rows(m, r, true), r, true)
}

pub fn dilate(m: &Mask, r: usize) -> Mask {
    sweep_cols(&sweep_rows(m, r, false), r, false)
}

pub fn morph_open(m: &Mask, r: usize) -> Mask {
    dilate(&erode(m, r), r)
}

/// Heaviest 8-connected component with at least `min_area` pixels, located by
/// its intensity-weighted centroid on `original`.
pub fn detect_blob(mask: &Mask, original: &Frame, min_area: usize) -> Option<Blob> {
    assert_eq!(
        (mask.width, mask.height),
        (original.width, original.height),
        "mask and frame dimensions differ"
    );
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut best: Option<(f64, Blob)> = None;

    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut mass, mut mx, mut my) = (0usize, 0.0f64, 0.0f64, 0.0f64);
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            let wgt = original.pixels[idx] as f64;
            area += 1;
            mass += wgt;
            mx += wgt * x as f64;
            my += wgt * y as f64;
            sx += x as f64;
            sy += y as f64;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.bits[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        if area < min_area {
            continue;
        }
        let blob = if mass > 0.0 {
            Blob {
                cx: mx / mass,
                cy: my / mass,
                area,
            }
        } else {
            Blob {
                cx: sx / area as f64,
                cy: sy / area as f64,
                area,
            }
        };
        if best.as_ref().is_none_or(|(m, _)| mass > *m) {
            best = Some((mass, blob));
        }
    }
    best.map(|(_, b)| b)
}

/// Full pipeline: spot position on the plane (m), or `None` for a
/// tracking-loss frame.
pub fn locate_spot(f: &Frame, cfg: &PipelineConfig) -> Option<(f64, f64)> {
    let small = preprocess(f, cfg);
    let mask = adaptive_threshold(&small, cfg.threshold_frac);
    let opened = morph_open(&mask, cfg.open_kernel);
    let blob = detect_blob(&opened, &small, cfg.min_area)?;
    Some(small.pixel_to_plane(blob.cx, blob.cy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// Plain ASCII graymap.
    P2,
    /// Binary graymap.
    P5,
}

pub fn write_pgm<W: Write>(f: &Frame, format: PgmFormat, mut out: W) -> io::Result<()> {
    let quantize = |p: f32| p.round().clamp(0.0, 255.0) as u8;
    match format {
        PgmFormat::P2 => {
            writeln!(out, "P2\n{} {}\n255", f.width, f.height)?;
            for row in f.pixels.chunks(f.width) {
                let line: Vec<String> = row.iter().map(|&p| quantize(p).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        PgmFormat::P5 => {
            write!(out, "P5\n{} {}\n255\n", f.width, f.height)?;
            let bytes: Vec<u8> = f.pixels.iter().map(|&p| quantize(p)).collect();
            out.write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn save_pgm(f: &Frame, format: PgmFormat, path: &Path) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    write_pgm(f, format, &mut w)?;
    w.flush()
}
