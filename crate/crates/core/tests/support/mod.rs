//! Shared helpers for integration and acceptance tests.
#![allow(dead_code)]

pub mod lp;

use echoscat::model::ImagingConfig;

/// Tiny 16 x 16 raster with kernels that fit inside it.
pub fn config_16() -> ImagingConfig {
    let mut cfg = ImagingConfig {
        f0_hz: 5e6,
        fs_hz: 25e6,
        bandwidth_frac: 1.6,
        n_lines: 16,
        pitch_mm: 0.1,
        aperture_mm: 0.5,
        noise_sigma: 0.0,
        ..ImagingConfig::default()
    };
    cfg.depth_mm = 16.0 * cfg.dz_mm();
    cfg
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}
