//! Depth-banded point-spread functions.
//!
//! The axial profile is the two-way (self-convolved) Gaussian-enveloped
//! cosine pulse; the lateral profile is a Gaussian whose -6 dB width grows
//! linearly with depth, `w(z) = max(lambda * z / aperture, lambda / 2)`.
//! Each band's kernel is the outer product of the two, normalized to unit
//! peak.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::save_grid_with_comment;
use crate::model::{ImagingConfig, ScatterGrid, SPEED_OF_SOUND_MM_S};

/// Amplitude ratio corresponding to -6 dB.
pub const MINUS_6_DB: f64 = 0.501_187_233_627_272_2;

/// `-ln(10^(-6/20))`, the exponent at which a Gaussian drops by 6 dB.
fn ln_minus_6_db() -> f64 {
    -MINUS_6_DB.ln()
}

pub const DEFAULT_BANDS: usize = 8;

/// Sampled transmit pulse, odd length, peak 1 at the center sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Pulse {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    pub sigma_t_s: f64,
}

impl Pulse {
    pub fn half_len(&self) -> usize {
        self.samples.len() / 2
    }
}

/// Gaussian-enveloped cosine `cos(2 pi f0 t) exp(-t^2 / (2 sigma_t^2))` with
/// `sigma_t` chosen so the amplitude spectrum's -6 dB width is
/// `bandwidth_frac * f0`, sampled at `fs_hz` and truncated at `+-3 sigma_t`.
pub fn make_pulse(f0_hz: f64, bandwidth_frac: f64, fs_hz: f64) -> Result<Pulse> {
    if !(f0_hz > 0.0 && f0_hz.is_finite()) {
        return Err(Error::param("f0_hz", "must be positive"));
    }
    if !(bandwidth_frac > 0.0 && bandwidth_frac < 2.0) {
        return Err(Error::param(
            "bandwidth_frac",
            format!("{bandwidth_frac} outside (0, 2)"),
        ));
    }
    if !(fs_hz > 4.0 * f0_hz && fs_hz.is_finite()) {
        return Err(Error::param("fs_hz", "must exceed 4 x f0_hz"));
    }
    let sigma_t = pulse_sigma_t(f0_hz, bandwidth_frac);
    let half = (3.0 * sigma_t * fs_hz).floor() as usize;
    let samples = (0..=2 * half)
        .map(|n| {
            let t = (n as f64 - half as f64) / fs_hz;
            (2.0 * std::f64::consts::PI * f0_hz * t).cos() * (-t * t / (2.0 * sigma_t * sigma_t)).exp()
        })
        .collect();
    Ok(Pulse {
        samples,
        fs_hz,
        sigma_t_s: sigma_t,
    })
}

/// Envelope standard deviation for a given fractional -6 dB bandwidth.
///
/// The spectrum of the Gaussian envelope is `exp(-2 pi^2 sigma^2 df^2)`; its
/// -6 dB half-width is `bandwidth_frac * f0 / 2`.
pub fn pulse_sigma_t(f0_hz: f64, bandwidth_frac: f64) -> f64 {
    let half_width = 0.5 * bandwidth_frac * f0_hz;
    (ln_minus_6_db() / 2.0).sqrt() / (std::f64::consts::PI * half_width)
}

/// Full discrete self-convolution of the pulse (transmit-receive response),
/// normalized to unit peak magnitude.
pub fn two_way(pulse: &Pulse) -> Vec<f64> {
    let p = &pulse.samples;
    let n = p.len();
    let mut out = vec![0.0; 2 * n - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in p.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v /= peak);
    out
}

/// Lateral -6 dB beamwidth at depth `z_mm`.
pub fn beamwidth_mm(config: &ImagingConfig, z_mm: f64) -> f64 {
    let lambda = config.wavelength_mm();
    (lambda * z_mm.abs() / config.aperture_mm).max(0.5 * lambda)
}

/// Gaussian standard deviation for a -6 dB full width.
pub fn sigma_from_width(width: f64) -> f64 {
    0.5 * width / (2.0 * ln_minus_6_db()).sqrt()
}

/// One depth band: separable kernel centered at `z_center_mm`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfBand {
    pub z_center_mm: f64,
    /// Lateral Gaussian sigma in mm (needed to re-sample steered kernels).
    pub sigma_x_mm: f64,
    /// Lateral profile over offsets `-h..=h` scanlines, peak 1.
    pub lateral: Vec<f64>,
    /// Two-way axial profile over offsets `-h..=h` samples, peak 1.
    pub axial: Vec<f64>,
}

impl PsfBand {
    pub fn lateral_half(&self) -> usize {
        self.lateral.len() / 2
    }

    pub fn axial_half(&self) -> usize {
        self.axial.len() / 2
    }

    /// Kernel value at lateral offset `l` and axial offset `m` (indices
    /// relative to the center).
    pub fn value(&self, l: isize, m: isize) -> f64 {
        let lh = self.lateral_half() as isize;
        let mh = self.axial_half() as isize;
        if l.abs() > lh || m.abs() > mh {
            return 0.0;
        }
        self.lateral[(l + lh) as usize] * self.axial[(m + mh) as usize]
    }

    /// Dense kernel, scanline-major (`[lateral][axial]`).
    pub fn kernel(&self) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.lateral.len() * self.axial.len());
        for a in &self.lateral {
            for b in &self.axial {
                k.push(a * b);
            }
        }
        k
    }
}

/// Spatially varying PSF as an ordered set of depth bands tiling
/// `[0, depth_mm]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfStack {
    bands: Vec<PsfBand>,
    f0_hz: f64,
    band_height_mm: f64,
    dx_mm: f64,
    dz_mm: f64,
}

impl PsfStack {
    /// Validates the stack invariants: centers increasing and tiling
    /// `[0, n * band_height]`, odd kernel extents, unit peak.
    pub fn new(
        bands: Vec<PsfBand>,
        f0_hz: f64,
        band_height_mm: f64,
        dx_mm: f64,
        dz_mm: f64,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::param("bands", "at least one band required"));
        }
        for (i, b) in bands.iter().enumerate() {
            let expected = (i as f64 + 0.5) * band_height_mm;
            if (b.z_center_mm - expected).abs() > 1e-9 * band_height_mm.max(1.0) {
                return Err(Error::param(
                    format!("bands[{i}].z_center_mm"),
                    format!("{} does not tile the depth (expected {expected})", b.z_center_mm),
                ));
            }
            if b.lateral.len() % 2 == 0 || b.axial.len() % 2 == 0 {
                return Err(Error::param(format!("bands[{i}]"), "kernel extent must be odd"));
            }
            let peak = b
                .kernel()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if (peak - 1.0).abs() > 1e-12 {
                return Err(Error::param(
                    format!("bands[{i}]"),
                    format!("kernel peak {peak} is not 1"),
                ));
            }
        }
        Ok(PsfStack {
            bands,
            f0_hz,
            band_height_mm,
            dx_mm,
            dz_mm,
        })
    }

    pub fn bands(&self) -> &[PsfBand] {
        &self.bands
    }
    pub fn f0_hz(&self) -> f64 {
        self.f0_hz
    }
    pub fn band_height_mm(&self) -> f64 {
        self.band_height_mm
    }
    pub fn dx_mm(&self) -> f64 {
        self.dx_mm
    }
    pub fn dz_mm(&self) -> f64 {
        self.dz_mm
    }

    /// Writes one `.sgrid` per band (`band_000.sgrid`, ...) with values
    /// mapped to `[0, 1]` by `(v + 1) / 2`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (i, b) in self.bands.iter().enumerate() {
            let cols = b.lateral.len();
            let rows = b.axial.len();
            let mut values = vec![0f32; rows * cols];
            for (l, lv) in b.lateral.iter().enumerate() {
                for (m, av) in b.axial.iter().enumerate() {
                    values[m * cols + l] = (((lv * av) + 1.0) / 2.0).clamp(0.0, 1.0) as f32;
                }
            }
            let grid = ScatterGrid::new(
                rows,
                cols,
                self.dz_mm,
                self.dx_mm,
                -(b.lateral_half() as f64) * self.dx_mm,
                b.z_center_mm - b.axial_half() as f64 * self.dz_mm,
                values,
            )?;
            let path = dir.join(format!("band_{i:03}.sgrid"));
            let comment = format!(
                "psf band {i} z_center_mm={} stored=(v+1)/2 f0_hz={}",
                b.z_center_mm, self.f0_hz
            );
            save_grid_with_comment(&grid, &path, Some(&comment))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Builds the depth-banded PSF for `config` with `n_bands` equal-height
/// bands over `[0, depth_mm]`.
pub fn make_psf_stack(config: &ImagingConfig, n_bands: usize) -> Result<PsfStack> {
    config.validate()?;
    if n_bands == 0 {
        return Err(Error::param("n_bands", "must be at least 1"));
    }
    let pulse = make_pulse(config.f0_hz, config.bandwidth_frac, config.fs_hz)?;
    let axial = two_way(&pulse);
    let samples = config.samples_per_line();
    if axial.len() > samples {
        return Err(Error::param(
            "n_bands",
            format!(
                "axial kernel extent {} exceeds {} samples per line",
                axial.len(),
                samples
            ),
        ));
    }
    let band_height = config.depth_mm / n_bands as f64;
    let mut bands = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let z_center = (b as f64 + 0.5) * band_height;
        let sigma_x = sigma_from_width(beamwidth_mm(config, z_center));
        let half = (3.0 * sigma_x / config.pitch_mm).floor() as usize;
        if 2 * half + 1 > config.n_lines {
            return Err(Error::param(
                "aperture_mm",
                format!(
                    "lateral kernel extent {} at z = {z_center} mm exceeds {} scanlines",
                    2 * half + 1,
                    config.n_lines
                ),
            ));
        }
        let lateral = (0..=2 * half)
            .map(|l| {
                let x = (l as f64 - half as f64) * config.pitch_mm;
                (-x * x / (2.0 * sigma_x * sigma_x)).exp()
            })
            .collect();
        bands.push(PsfBand {
            z_center_mm: z_center,
            sigma_x_mm: sigma_x,
            lateral,
            axial: axial.clone(),
        });
    }
    PsfStack::new(
        bands,
        config.f0_hz,
        band_height,
        config.pitch_mm,
        SPEED_OF_SOUND_MM_S / (2.0 * config.fs_hz),
    )
}
