//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates follow the usual probe convention: `x` is lateral, `y` is
//! elevational (out of the image plane) and `z` is axial depth, all in
//! millimeters. Every type validates its invariants at construction and is
//! immutable afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in soft tissue, m/s.
pub const SPEED_OF_SOUND_M_S: f64 = 1540.0;

/// Speed of sound in mm/s, the unit used by all geometry code.
pub const SPEED_OF_SOUND_MM_S: f64 = SPEED_OF_SOUND_M_S * 1e3;

/// Axis-aligned box in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Bounds {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        let b = Bounds {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            z_min: z.0,
            z_max: z.1,
        };
        for (name, lo, hi) in [("x", x.0, x.1), ("y", y.0, y.1), ("z", z.0, z.1)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::param(
                    format!("bounds.{name}"),
                    format!("invalid interval [{lo}, {hi}]"),
                ));
            }
        }
        Ok(b)
    }

    /// Square in the image plane centered at `(cx, cz)` with the given
    /// elevational half-thickness.
    pub fn centered_square(cx: f64, cz: f64, side_mm: f64, y_half: f64) -> Result<Self> {
        let h = side_mm / 2.0;
        Bounds::new((cx - h, cx + h), (-y_half, y_half), (cz - h, cz + h))
    }

    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        x >= self.x_min
            && x <= self.x_max
            && y >= self.y_min
            && y <= self.y_max
            && z >= self.z_min
            && z <= self.z_max
    }

    pub fn lateral_extent(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn axial_extent(&self) -> f64 {
        self.z_max - self.z_min
    }

    /// Center in the `(x, z)` image plane.
    pub fn center_xz(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.z_min + self.z_max),
        )
    }
}

/// A point reflector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub amp: f64,
}

/// Continuous-position point scatterers inside a domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ScattererCloud {
    points: Vec<Scatterer>,
    domain: Bounds,
}

impl ScattererCloud {
    pub fn new(points: Vec<Scatterer>, domain: Bounds) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.amp.is_finite() && (0.0..=1.0).contains(&p.amp)) {
                return Err(Error::param(
                    format!("points[{i}].amp"),
                    format!("amplitude {} outside [0, 1]", p.amp),
                ));
            }
            if !domain.contains(p.x_mm, p.y_mm, p.z_mm) {
                return Err(Error::param(
                    format!("points[{i}]"),
                    format!(
                        "position ({}, {}, {}) outside domain",
                        p.x_mm, p.y_mm, p.z_mm
                    ),
                ));
            }
        }
        Ok(ScattererCloud { points, domain })
    }

    pub fn empty(domain: Bounds) -> Self {
        ScattererCloud {
            points: Vec::new(),
            domain,
        }
    }

    pub fn points(&self) -> &[Scatterer] {
        &self.points
    }

    pub fn domain(&self) -> &Bounds {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same positions with replaced amplitudes.
    pub fn with_amplitudes(&self, amps: &[f64]) -> Result<Self> {
        if amps.len() != self.points.len() {
            return Err(Error::param(
                "amps",
                format!("expected {} amplitudes, got {}", self.points.len(), amps.len()),
            ));
        }
        let points = self
            .points
            .iter()
            .zip(amps)
            .map(|(p, &amp)| Scatterer { amp, ..*p })
            .collect();
        ScattererCloud::new(points, self.domain)
    }

    /// Union of two clouds over the bounding box of both domains.
    pub fn union(&self, other: &ScattererCloud) -> ScattererCloud {
        let a = self.domain;
        let b = other.domain;
        let domain = Bounds {
            x_min: a.x_min.min(b.x_min),
            x_max: a.x_max.max(b.x_max),
            y_min: a.y_min.min(b.y_min),
            y_max: a.y_max.max(b.y_max),
            z_min: a.z_min.min(b.z_min),
            z_max: a.z_max.max(b.z_max),
        };
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        ScattererCloud { points, domain }
    }
}

/// Discrete raster of scatterer amplitudes.
///
/// Rows run along depth (`z`), columns along the lateral axis (`x`);
/// `origin` is the center of pixel `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterGrid {
    rows: usize,
    cols: usize,
    dz_mm: f64,
    dx_mm: f64,
    origin_x_mm: f64,
    origin_z_mm: f64,
    values: Vec<f32>,
}

impl ScatterGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rows: usize,
        cols: usize,
        dz_mm: f64,
        dx_mm: f64,
        origin_x_mm: f64,
        origin_z_mm: f64,
        values: Vec<f32>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("rows/cols", "must be positive"));
        }
        if !(dz_mm > 0.0 && dz_mm.is_finite()) {
            return Err(Error::param("dz_mm", format!("{dz_mm} is not positive")));
        }
        if !(dx_mm > 0.0 && dx_mm.is_finite()) {
            return Err(Error::param("dx_mm", format!("{dx_mm} is not positive")));
        }
        if !(origin_x_mm.is_finite() && origin_z_mm.is_finite()) {
            return Err(Error::param("origin_mm", "must be finite"));
        }
        if values.len() != rows * cols {
            return Err(Error::param(
                "values",
                format!("length {} != rows*cols = {}", values.len(), rows * cols),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param(
                format!("values[{i}]"),
                format!("{} outside [0, 1]", values[i]),
            ));
        }
        Ok(ScatterGrid {
            rows,
            cols,
            dz_mm,
            dx_mm,
            origin_x_mm,
            origin_z_mm,
            values,
        })
    }

    /// Grid on the pixel lattice of `geometry`, filled with zeros.
    pub fn zeros_like(geometry: &RasterGeometry) -> Self {
        ScatterGrid {
            rows: geometry.samples_per_line,
            cols: geometry.scanlines,
            dz_mm: geometry.dz_mm(),
            dx_mm: geometry.pitch_mm,
            origin_x_mm: geometry.x0_mm(),
            origin_z_mm: 0.0,
            values: vec![0.0; geometry.len()],
        }
    }

    /// Builds a grid from scanline-major raster values (`[line][sample]`),
    /// clamping each value into `[0, 1]`. Returns the grid and the fraction
    /// of values that had to be clamped.
    pub fn from_raster_clamped(geometry: &RasterGeometry, raster: &[f64]) -> (Self, f64) {
        let mut grid = ScatterGrid::zeros_like(geometry);
        let spl = geometry.samples_per_line;
        let mut clipped = 0usize;
        for line in 0..geometry.scanlines {
            for s in 0..spl {
                let v = raster[line * spl + s];
                if !(0.0..=1.0).contains(&v) {
                    clipped += 1;
                }
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                grid.values[s * grid.cols + line] = v as f32;
            }
        }
        (grid, clipped as f64 / raster.len().max(1) as f64)
    }

    /// Values in scanline-major raster order (`[col][row]`).
    pub fn to_raster(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.values[r * self.cols + c] as f64;
            }
        }
        out
    }

    /// Whether this grid sits exactly on the pixel lattice of `geometry`.
    pub fn matches_raster(&self, geometry: &RasterGeometry) -> bool {
        let tol = 1e-9;
        self.rows == geometry.samples_per_line
            && self.cols == geometry.scanlines
            && (self.dz_mm - geometry.dz_mm()).abs() <= tol * geometry.dz_mm()
            && (self.dx_mm - geometry.pitch_mm).abs() <= tol * geometry.pitch_mm
            && (self.origin_x_mm - geometry.x0_mm()).abs() <= 1e-9
            && self.origin_z_mm.abs() <= 1e-9
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn dz_mm(&self) -> f64 {
        self.dz_mm
    }
    pub fn dx_mm(&self) -> f64 {
        self.dx_mm
    }
    pub fn origin_x_mm(&self) -> f64 {
        self.origin_x_mm
    }
    pub fn origin_z_mm(&self) -> f64 {
        self.origin_z_mm
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// Lateral position of column `c`'s center.
    pub fn x_of(&self, c: usize) -> f64 {
        self.origin_x_mm + c as f64 * self.dx_mm
    }

    /// Axial position of row `r`'s center.
    pub fn z_of(&self, r: usize) -> f64 {
        self.origin_z_mm + r as f64 * self.dz_mm
    }
}

/// Pixel lattice shared by RF frames, B-mode images and on-raster grids.
///
/// Scanline `i` sits at `x0 + i * pitch` with the array centered on
/// `x = 0`; sample `j` sits at depth `j * dz` where `dz = c / (2 fs)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub scanlines: usize,
    pub samples_per_line: usize,
    pub pitch_mm: f64,
    pub fs_hz: f64,
}

impl RasterGeometry {
    pub fn dz_mm(&self) -> f64 {
        SPEED_OF_SOUND_MM_S / (2.0 * self.fs_hz)
    }

    pub fn x0_mm(&self) -> f64 {
        -0.5 * (self.scanlines as f64 - 1.0) * self.pitch_mm
    }

    pub fn x_of(&self, line: usize) -> f64 {
        self.x0_mm() + line as f64 * self.pitch_mm
    }

    pub fn z_of(&self, sample: usize) -> f64 {
        sample as f64 * self.dz_mm()
    }

    pub fn len(&self) -> usize {
        self.scanlines * self.samples_per_line
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of the imaged region in the `(x, z)` plane.
    pub fn center_xz(&self) -> (f64, f64) {
        (
            0.0,
            0.5 * (self.samples_per_line as f64 - 1.0) * self.dz_mm(),
        )
    }

    /// Lateral width spanned by scanline centers.
    pub fn width_mm(&self) -> f64 {
        (self.scanlines as f64 - 1.0) * self.pitch_mm
    }

    /// Depth spanned by sample centers.
    pub fn depth_mm(&self) -> f64 {
        (self.samples_per_line as f64 - 1.0) * self.dz_mm()
    }
}

/// Pre-detection RF samples, scanline-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RFFrame {
    geometry: RasterGeometry,
    f0_hz: f64,
    steer_deg: f64,
    rotate_deg: f64,
    values: Vec<f64>,
}

impl RFFrame {
    pub fn new(
        geometry: RasterGeometry,
        f0_hz: f64,
        steer_deg: f64,
        rotate_deg: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_raster(&geometry, values.len())?;
        if !(geometry.fs_hz > 2.0 * f0_hz) {
            return Err(Error::param(
                "fs_hz",
                format!("{} Hz does not exceed 2 x f0 = {} Hz", geometry.fs_hz, 2.0 * f0_hz),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "non-finite RF sample"));
        }
        Ok(RFFrame {
            geometry,
            f0_hz,
            steer_deg,
            rotate_deg,
            values,
        })
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }
    pub fn scanlines(&self) -> usize {
        self.geometry.scanlines
    }
    pub fn samples_per_line(&self) -> usize {
        self.geometry.samples_per_line
    }
    pub fn fs_hz(&self) -> f64 {
        self.geometry.fs_hz
    }
    pub fn pitch_mm(&self) -> f64 {
        self.geometry.pitch_mm
    }
    pub fn f0_hz(&self) -> f64 {
        self.f0_hz
    }
    pub fn steer_deg(&self) -> f64 {
        self.steer_deg
    }
    pub fn rotate_deg(&self) -> f64 {
        self.rotate_deg
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn line(&self, i: usize) -> &[f64] {
        let n = self.geometry.samples_per_line;
        &self.values[i * n..(i + 1) * n]
    }

    /// Largest absolute sample.
    pub fn peak_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Log-compressed grayscale image with values in `[0, 1]`, on the same
/// scanline-major lattice as the RF frame it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct BModeImage {
    geometry: RasterGeometry,
    dynamic_range_db: f64,
    steer_deg: f64,
    rotate_deg: f64,
    values: Vec<f64>,
}

impl BModeImage {
    pub fn new(
        geometry: RasterGeometry,
        dynamic_range_db: f64,
        steer_deg: f64,
        rotate_deg: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_raster(&geometry, values.len())?;
        if !(dynamic_range_db > 0.0 && dynamic_range_db.is_finite()) {
            return Err(Error::param(
                "dynamic_range_db",
                format!("{dynamic_range_db} is not positive"),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param(
                format!("values[{i}]"),
                format!("{} outside [0, 1]", values[i]),
            ));
        }
        Ok(BModeImage {
            geometry,
            dynamic_range_db,
            steer_deg,
            rotate_deg,
            values,
        })
    }

    /// Reads a B-mode image stored as an on-raster `.sgrid`.
    pub fn from_grid(
        grid: &ScatterGrid,
        fs_hz: f64,
        dynamic_range_db: f64,
        steer_deg: f64,
        rotate_deg: f64,
    ) -> Result<Self> {
        let geometry = RasterGeometry {
            scanlines: grid.cols(),
            samples_per_line: grid.rows(),
            pitch_mm: grid.dx_mm(),
            fs_hz,
        };
        if !grid.matches_raster(&geometry) {
            return Err(Error::format(
                "dz_mm",
                format!(
                    "grid spacing {} mm does not match fs = {} Hz (expected {} mm)",
                    grid.dz_mm(),
                    fs_hz,
                    geometry.dz_mm()
                ),
            ));
        }
        BModeImage::new(
            geometry,
            dynamic_range_db,
            steer_deg,
            rotate_deg,
            grid.to_raster(),
        )
    }

    /// The image as an on-raster grid (rows = depth).
    pub fn to_grid(&self) -> ScatterGrid {
        ScatterGrid::from_raster_clamped(&self.geometry, &self.values).0
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }
    pub fn scanlines(&self) -> usize {
        self.geometry.scanlines
    }
    pub fn samples_per_line(&self) -> usize {
        self.geometry.samples_per_line
    }
    pub fn dynamic_range_db(&self) -> f64 {
        self.dynamic_range_db
    }
    pub fn steer_deg(&self) -> f64 {
        self.steer_deg
    }
    pub fn rotate_deg(&self) -> f64 {
        self.rotate_deg
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_raster(geometry: &RasterGeometry, len: usize) -> Result<()> {
    if geometry.scanlines == 0 || geometry.samples_per_line == 0 {
        return Err(Error::param("scanlines/samples_per_line", "must be positive"));
    }
    if !(geometry.pitch_mm > 0.0 && geometry.pitch_mm.is_finite()) {
        return Err(Error::param("pitch_mm", "must be positive"));
    }
    if !(geometry.fs_hz > 0.0 && geometry.fs_hz.is_finite()) {
        return Err(Error::param("fs_hz", "must be positive"));
    }
    if len != geometry.len() {
        return Err(Error::param(
            "values",
            format!(
                "length {len} != scanlines*samples_per_line = {}",
                geometry.len()
            ),
        ));
    }
    Ok(())
}

/// Transducer, raster, noise and display parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    pub f0_hz: f64,
    pub fs_hz: f64,
    /// Fractional -6 dB bandwidth of the transmit pulse.
    pub bandwidth_frac: f64,
    pub n_lines: usize,
    pub pitch_mm: f64,
    pub depth_mm: f64,
    pub aperture_mm: f64,
    pub focus_mm: f64,
    /// Full width at half maximum of the elevational slab weighting.
    pub slab_thickness_mm: f64,
    /// Noise standard deviation relative to the peak noiseless RF; 0 disables.
    pub noise_sigma: f64,
    pub dynamic_range_db: f64,
    pub rng_seed: u64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            f0_hz: 5.0e6,
            fs_hz: 25.0e6,
            bandwidth_frac: 0.6,
            n_lines: 128,
            pitch_mm: 0.22,
            depth_mm: 28.0,
            aperture_mm: 2.5,
            focus_mm: 14.0,
            slab_thickness_mm: 1.0,
            noise_sigma: 0.02,
            dynamic_range_db: 60.0,
            rng_seed: 0,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f0_hz", self.f0_hz),
            ("fs_hz", self.fs_hz),
            ("bandwidth_frac", self.bandwidth_frac),
            ("pitch_mm", self.pitch_mm),
            ("depth_mm", self.depth_mm),
            ("aperture_mm", self.aperture_mm),
            ("focus_mm", self.focus_mm),
            ("slab_thickness_mm", self.slab_thickness_mm),
            ("dynamic_range_db", self.dynamic_range_db),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be strictly positive")));
            }
        }
        if self.n_lines == 0 {
            return Err(Error::param("n_lines", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be >= 0"));
        }
        if !(self.fs_hz > 2.0 * self.f0_hz) {
            return Err(Error::param("fs_hz", "must exceed 2 x f0_hz"));
        }
        if self.samples_per_line() == 0 {
            return Err(Error::param("depth_mm", "shallower than one sample"));
        }
        Ok(())
    }

    pub fn wavelength_mm(&self) -> f64 {
        SPEED_OF_SOUND_MM_S / self.f0_hz
    }

    pub fn dz_mm(&self) -> f64 {
        SPEED_OF_SOUND_MM_S / (2.0 * self.fs_hz)
    }

    pub fn samples_per_line(&self) -> usize {
        (self.depth_mm / self.dz_mm()).round() as usize
    }

    pub fn geometry(&self) -> RasterGeometry {
        RasterGeometry {
            scanlines: self.n_lines,
            samples_per_line: self.samples_per_line(),
            pitch_mm: self.pitch_mm,
            fs_hz: self.fs_hz,
        }
    }
}
