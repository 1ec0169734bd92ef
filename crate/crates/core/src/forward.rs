//! Forward model: scatterers -> RF -> envelope -> B-mode.
//!
//! `f = g * h + noise`: scatterer amplitudes are splatted bilinearly onto
//! the RF raster, passed through the depth-banded PSF convolution, and
//! perturbed by white Gaussian noise scaled to the peak noiseless RF.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::conv::BandedConvolution;
use crate::error::{Error, Result};
use crate::model::{
    BModeImage, ImagingConfig, RFFrame, RasterGeometry, ScatterGrid, ScattererCloud,
};
use crate::psf::PsfStack;

pub const MAX_ROTATE_DEG: f64 = 45.0;
pub const MAX_STEER_DEG: f64 = 30.0;

/// Full width at half maximum to Gaussian sigma.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// RF frame plus the number of scatterers that fell outside the raster.
#[derive(Clone, Debug)]
pub struct SimulatedRf {
    pub frame: RFFrame,
    pub dropped: usize,
}

/// Either representation of the tissue.
#[derive(Clone, Copy, Debug)]
pub enum Scene<'a> {
    Cloud(&'a ScattererCloud),
    Grid(&'a ScatterGrid),
}

/// Detected (pre-compression) envelope on an RF raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub geometry: RasterGeometry,
    pub steer_deg: f64,
    pub rotate_deg: f64,
    pub values: Vec<f64>,
}

/// Continuous index `u` on a lattice of `n` nodes -> (lower node, fraction).
fn lattice_cell(u: f64, n: usize) -> Option<(usize, f64)> {
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let i = (u.floor() as usize).min(n - 2);
    Some((i, u - i as f64))
}

/// Adds `amp` at continuous raster position `(x_mm, z_mm)` with bilinear
/// weights. Returns false when the position lies outside the raster.
pub fn splat_point(raster: &mut [f64], geometry: &RasterGeometry, x_mm: f64, z_mm: f64, amp: f64) -> bool {
    let u = (x_mm - geometry.x0_mm()) / geometry.pitch_mm;
    let v = z_mm / geometry.dz_mm();
    splat_bilinear(raster, geometry.scanlines, geometry.samples_per_line, u, v, amp)
}

/// Bilinear splat onto a `[outer][inner]` array at fractional indices
/// `(a, b)`. Returns false when the position lies outside the lattice.
pub fn splat_bilinear(values: &mut [f64], n_outer: usize, n_inner: usize, a: f64, b: f64, amp: f64) -> bool {
    let (Some((i, fa)), Some((j, fb))) = (lattice_cell(a, n_outer), lattice_cell(b, n_inner)) else {
        return false;
    };
    let mut add = |i: usize, j: usize, w: f64| {
        if w != 0.0 {
            values[i * n_inner + j] += amp * w;
        }
    };
    add(i, j, (1.0 - fa) * (1.0 - fb));
    if fb > 0.0 {
        add(i, j + 1, (1.0 - fa) * fb);
    }
    if fa > 0.0 {
        add(i + 1, j, fa * (1.0 - fb));
        if fb > 0.0 {
            add(i + 1, j + 1, fa * fb);
        }
    }
    true
}

/// Elevational slab weight for a scatterer at `y_mm`.
pub fn slab_weight(y_mm: f64, slab_thickness_mm: f64) -> f64 {
    let s = slab_thickness_mm / FWHM_PER_SIGMA;
    (-y_mm * y_mm / (2.0 * s * s)).exp()
}

/// Rotates `(x, z)` by `-rotate_deg` about `(cx, cz)`: the scene as seen by
/// a probe rotated by `+rotate_deg`.
pub fn rotate_into_view(x: f64, z: f64, cx: f64, cz: f64, rotate_deg: f64) -> (f64, f64) {
    if rotate_deg == 0.0 {
        return (x, z);
    }
    let (s, c) = (-rotate_deg.to_radians()).sin_cos();
    let (dx, dz) = (x - cx, z - cz);
    (cx + c * dx - s * dz, cz + s * dx + c * dz)
}

/// Splats a cloud onto the RF raster after view rotation and slab weighting.
/// Returns the source raster and the count of dropped scatterers.
pub fn splat_cloud(
    cloud: &ScattererCloud,
    geometry: &RasterGeometry,
    slab_thickness_mm: f64,
    rotate_deg: f64,
) -> (Vec<f64>, usize) {
    let mut raster = vec![0.0; geometry.len()];
    let (cx, cz) = cloud.domain().center_xz();
    let mut dropped = 0;
    for p in cloud.points() {
        let (x, z) = rotate_into_view(p.x_mm, p.z_mm, cx, cz, rotate_deg);
        let amp = p.amp * slab_weight(p.y_mm, slab_thickness_mm);
        if !splat_point(&mut raster, geometry, x, z, amp) {
            dropped += 1;
        }
    }
    (raster, dropped)
}

fn check_view(rotate_deg: f64, steer_deg: f64) -> Result<()> {
    if !(rotate_deg.abs() <= MAX_ROTATE_DEG) {
        return Err(Error::param("rotate_deg", format!("|{rotate_deg}| exceeds {MAX_ROTATE_DEG}")));
    }
    if !(steer_deg.abs() <= MAX_STEER_DEG) {
        return Err(Error::param("steer_deg", format!("|{steer_deg}| exceeds {MAX_STEER_DEG}")));
    }
    Ok(())
}

/// Adds seeded white Gaussian noise with standard deviation
/// `noise_sigma * peak(|rf|)`.
pub fn add_noise(rf: &mut [f64], noise_sigma: f64, rng_seed: u64) {
    if noise_sigma == 0.0 {
        return;
    }
    let peak = rf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let std = noise_sigma * peak;
    if std == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for v in rf.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += std * n;
    }
}

/// Simulates one RF view of a scatterer cloud.
pub fn simulate_rf(
    cloud: &ScattererCloud,
    psf: &PsfStack,
    config: &ImagingConfig,
    rotate_deg: f64,
    steer_deg: f64,
    rng_seed: u64,
) -> Result<SimulatedRf> {
    check_view(rotate_deg, steer_deg)?;
    let geometry = config.geometry();
    let (src, dropped) = splat_cloud(cloud, &geometry, config.slab_thickness_mm, rotate_deg);
    let op = BandedConvolution::new(psf, &geometry, steer_deg)?;
    let mut rf = op.apply(&src);
    add_noise(&mut rf, config.noise_sigma, rng_seed);
    let frame = RFFrame::new(geometry, config.f0_hz, steer_deg, rotate_deg, rf)?;
    Ok(SimulatedRf { frame, dropped })
}

/// Source raster for a grid: a direct copy when the grid sits on the RF
/// lattice, otherwise each pixel center is splatted as a point scatterer.
pub fn grid_source(grid: &ScatterGrid, geometry: &RasterGeometry) -> Vec<f64> {
    if grid.matches_raster(geometry) {
        return grid.to_raster();
    }
    let mut raster = vec![0.0; geometry.len()];
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let a = grid.get(r, c) as f64;
            if a != 0.0 {
                splat_point(&mut raster, geometry, grid.x_of(c), grid.z_of(r), a);
            }
        }
    }
    raster
}

/// Simulates one RF view of a view-aligned grid (the on-grid operator `H`).
pub fn simulate_rf_grid(
    grid: &ScatterGrid,
    psf: &PsfStack,
    config: &ImagingConfig,
    rotate_deg: f64,
    steer_deg: f64,
    rng_seed: u64,
) -> Result<RFFrame> {
    if rotate_deg != 0.0 {
        return Err(Error::param(
            "rotate_deg",
            "grids are view-aligned; convert to a cloud to rotate",
        ));
    }
    check_view(rotate_deg, steer_deg)?;
    let geometry = config.geometry();
    let op = BandedConvolution::new(psf, &geometry, steer_deg)?;
    let mut rf = op.apply(&grid_source(grid, &geometry));
    add_noise(&mut rf, config.noise_sigma, rng_seed);
    RFFrame::new(geometry, config.f0_hz, steer_deg, 0.0, rf)
}

/// Analytic-signal construction reused across scanlines of one length.
pub struct AnalyticSignal {
    n: usize,
    n_fft: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl AnalyticSignal {
    pub fn new(n: usize) -> Self {
        let n_fft = (2 * n).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        AnalyticSignal {
            n,
            n_fft,
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        }
    }

    /// One-sided-spectrum analytic signal of a real line (zero-padded to
    /// avoid circular wrap-around). Its real part reproduces the input.
    pub fn compute(&self, line: &[f64]) -> Vec<Complex64> {
        assert_eq!(line.len(), self.n);
        let m = self.n_fft;
        let mut buf: Vec<Complex64> = line
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(m)
            .collect();
        self.fwd.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            if k == 0 || k == m / 2 {
                continue;
            } else if k < m / 2 {
                *v *= 2.0;
            } else {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / m as f64;
        buf.truncate(self.n);
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    pub fn envelope(&self, line: &[f64]) -> Vec<f64> {
        self.compute(line).iter().map(|c| c.norm()).collect()
    }
}

/// Envelope of a single line.
pub fn analytic_envelope(line: &[f64]) -> Vec<f64> {
    AnalyticSignal::new(line.len()).envelope(line)
}

/// Per-scanline analytic-signal envelope of a raster of scanline-major
/// samples.
pub fn envelope_raster(geometry: &RasterGeometry, rf: &[f64]) -> Vec<f64> {
    let spl = geometry.samples_per_line;
    let a = AnalyticSignal::new(spl);
    let mut out = Vec::with_capacity(rf.len());
    for line in rf.chunks(spl) {
        out.extend(a.envelope(line));
    }
    out
}

/// Envelope detection of an RF frame.
pub fn envelope(rf: &RFFrame) -> Result<Envelope> {
    if rf.samples_per_line() < 8 {
        return Err(Error::param("samples_per_line", "envelope needs at least 8 samples"));
    }
    Ok(Envelope {
        geometry: *rf.geometry(),
        steer_deg: rf.steer_deg(),
        rotate_deg: rf.rotate_deg(),
        values: envelope_raster(rf.geometry(), rf.values()),
    })
}

/// Log compression of one envelope value relative to `max`.
pub fn compress_value(env: f64, max: f64, dynamic_range_db: f64) -> f64 {
    if max <= 0.0 || env <= 0.0 {
        return 0.0;
    }
    (1.0 + 20.0 * (env / max).log10() / dynamic_range_db).clamp(0.0, 1.0)
}

/// `b = clamp(1 + 20 log10(env / max env) / dr, 0, 1)`; an all-zero envelope
/// maps to an all-zero image.
pub fn log_compress(env: &Envelope, dynamic_range_db: f64) -> Result<BModeImage> {
    if let Some(v) = env.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::param("env", format!("negative or NaN envelope value {v}")));
    }
    let max = env.values.iter().fold(0.0f64, |m, &v| m.max(v));
    let values = env
        .values
        .iter()
        .map(|&v| compress_value(v, max, dynamic_range_db))
        .collect();
    BModeImage::new(
        env.geometry,
        dynamic_range_db,
        env.steer_deg,
        env.rotate_deg,
        values,
    )
}

/// RF simulation, envelope detection and log compression in one call.
pub fn simulate_bmode(
    scene: Scene<'_>,
    psf: &PsfStack,
    config: &ImagingConfig,
    rotate_deg: f64,
    steer_deg: f64,
    rng_seed: u64,
) -> Result<BModeImage> {
    let rf = match scene {
        Scene::Cloud(c) => simulate_rf(c, psf, config, rotate_deg, steer_deg, rng_seed)?.frame,
        Scene::Grid(g) => simulate_rf_grid(g, psf, config, rotate_deg, steer_deg, rng_seed)?,
    };
    log_compress(&envelope(&rf)?, config.dynamic_range_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, Scatterer};
    use crate::psf::make_psf_stack;

    fn test_config() -> ImagingConfig {
        ImagingConfig {
            n_lines: 32,
            depth_mm: 8.0,
            noise_sigma: 0.0,
            ..ImagingConfig::default()
        }
    }

    fn domain(cfg: &ImagingConfig) -> Bounds {
        let g = cfg.geometry();
        Bounds::new(
            (g.x0_mm(), -g.x0_mm()),
            (-cfg.slab_thickness_mm, cfg.slab_thickness_mm),
            (0.0, g.depth_mm()),
        )
        .unwrap()
    }

    fn point(x: f64, z: f64, amp: f64) -> Scatterer {
        Scatterer {
            x_mm: x,
            y_mm: 0.0,
            z_mm: z,
            amp,
        }
    }

    #[test]
    fn impulse_at_band_center_reproduces_kernel() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 4).unwrap();
        let g = cfg.geometry();
        let band = &psf.bands()[1];
        let line = 16;
        let sample = (band.z_center_mm / g.dz_mm()).round() as usize;
        // Put the point exactly on a sample so the splat is a delta; the
        // sample depth is within half a sample of the band center.
        let cloud = ScattererCloud::new(
            vec![point(g.x_of(line), g.z_of(sample), 1.0)],
            domain(&cfg),
        )
        .unwrap();
        let rf = simulate_rf(&cloud, &psf, &cfg, 0.0, 0.0, 0).unwrap();
        assert_eq!(rf.dropped, 0);
        let spl = g.samples_per_line;
        let v = rf.frame.values();
        assert!((v[line * spl + sample] - 1.0).abs() < 1e-2);
        let lh = band.lateral_half() as isize;
        let mh = band.axial_half() as isize;
        let mut err = 0.0f64;
        for l in -lh..=lh {
            for m in -mh..=mh {
                let idx = ((line as isize + l) as usize) * spl + (sample as isize + m) as usize;
                err = err.max((v[idx] - band.value(l, m)).abs());
            }
        }
        // Residual comes from the blend of the neighboring band within half a sample.
        assert!(err < 2e-2, "{err}");
    }

    #[test]
    fn empty_cloud_gives_zero_rf_and_image() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let cloud = ScattererCloud::empty(domain(&cfg));
        let rf = simulate_rf(&cloud, &psf, &cfg, 0.0, 0.0, 1).unwrap();
        assert!(rf.frame.values().iter().all(|&v| v == 0.0));
        let b = simulate_bmode(Scene::Cloud(&cloud), &psf, &cfg, 0.0, 0.0, 1).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn superposition_holds() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 3).unwrap();
        let d = domain(&cfg);
        let a = ScattererCloud::new(vec![point(0.3, 2.0, 0.7), point(-1.1, 5.5, 0.2)], d).unwrap();
        let b = ScattererCloud::new(vec![point(0.35, 2.02, 0.9)], d).unwrap();
        let fa = simulate_rf(&a, &psf, &cfg, 5.0, 0.0, 0).unwrap().frame;
        let fb = simulate_rf(&b, &psf, &cfg, 5.0, 0.0, 0).unwrap().frame;
        let fab = simulate_rf(&a.union(&b), &psf, &cfg, 5.0, 0.0, 0).unwrap().frame;
        let peak = fab.peak_abs();
        for ((x, y), z) in fa.values().iter().zip(fb.values()).zip(fab.values()) {
            assert!((x + y - z).abs() <= 1e-6 * peak);
        }
    }

    #[test]
    fn out_of_raster_scatterers_are_counted() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 1).unwrap();
        let d = Bounds::new((-20.0, 20.0), (-1.0, 1.0), (-5.0, 20.0)).unwrap();
        let cloud = ScattererCloud::new(vec![point(15.0, 3.0, 1.0), point(0.0, 3.0, 1.0)], d).unwrap();
        let rf = simulate_rf(&cloud, &psf, &cfg, 0.0, 0.0, 0).unwrap();
        assert_eq!(rf.dropped, 1);
    }

    #[test]
    fn view_limits_are_enforced() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 1).unwrap();
        let cloud = ScattererCloud::empty(domain(&cfg));
        assert!(simulate_rf(&cloud, &psf, &cfg, 46.0, 0.0, 0).is_err());
        assert!(simulate_rf(&cloud, &psf, &cfg, 0.0, -31.0, 0).is_err());
    }

    #[test]
    fn grid_rejects_rotation_and_zero_grid_is_zero() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let grid = ScatterGrid::zeros_like(&cfg.geometry());
        assert!(simulate_rf_grid(&grid, &psf, &cfg, 1.0, 0.0, 0).is_err());
        let rf = simulate_rf_grid(&grid, &psf, &cfg, 0.0, 0.0, 0).unwrap();
        assert!(rf.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_grid_copies_band_kernel() {
        let cfg = ImagingConfig {
            noise_sigma: 0.0,
            ..test_config()
        };
        let psf = make_psf_stack(&cfg, 1).unwrap();
        let g = cfg.geometry();
        let (line, sample) = (10usize, g.samples_per_line / 2);
        let mut raster = vec![0.0; g.len()];
        raster[line * g.samples_per_line + sample] = 1.0;
        let (grid, _) = ScatterGrid::from_raster_clamped(&g, &raster);
        let rf = simulate_rf_grid(&grid, &psf, &cfg, 0.0, 0.0, 0).unwrap();
        let band = &psf.bands()[0];
        let spl = g.samples_per_line;
        for l in -(band.lateral_half() as isize)..=band.lateral_half() as isize {
            for m in -(band.axial_half() as isize)..=band.axial_half() as isize {
                let idx = ((line as isize + l) as usize) * spl + (sample as isize + m) as usize;
                assert_eq!(rf.values()[idx], band.value(l, m));
            }
        }
    }

    #[test]
    fn lateral_shift_is_exact_within_band() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let g = cfg.geometry();
        let d = domain(&cfg);
        let s = g.samples_per_line / 3;
        let at = |line: usize| {
            let c = ScattererCloud::new(vec![point(g.x_of(line), g.z_of(s), 0.6)], d).unwrap();
            simulate_rf(&c, &psf, &cfg, 0.0, 0.0, 0).unwrap().frame
        };
        let (a, b) = (at(12), at(15));
        let spl = g.samples_per_line;
        for i in 0..g.scanlines - 3 {
            for j in 0..spl {
                assert_eq!(b.values()[(i + 3) * spl + j], a.values()[i * spl + j]);
            }
        }
    }

    #[test]
    fn axial_shift_is_exact_with_one_band() {
        let cfg = test_config();
        let psf = make_psf_stack(&cfg, 1).unwrap();
        let g = cfg.geometry();
        let d = domain(&cfg);
        let at = |s: usize| {
            let c = ScattererCloud::new(vec![point(g.x_of(16), g.z_of(s), 0.6)], d).unwrap();
            simulate_rf(&c, &psf, &cfg, 0.0, 0.0, 0).unwrap().frame
        };
        let (a, b) = (at(100), at(107));
        let spl = g.samples_per_line;
        for i in 0..g.scanlines {
            for j in 0..spl - 7 {
                assert_eq!(b.values()[i * spl + j + 7], a.values()[i * spl + j]);
            }
        }
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let cfg = ImagingConfig {
            noise_sigma: 0.05,
            ..test_config()
        };
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let g = cfg.geometry();
        let c = ScattererCloud::new(vec![point(0.0, 4.0, 1.0)], domain(&cfg)).unwrap();
        let a = simulate_rf(&c, &psf, &cfg, 0.0, 0.0, 9).unwrap().frame;
        let b = simulate_rf(&c, &psf, &cfg, 0.0, 0.0, 9).unwrap().frame;
        let other = simulate_rf(&c, &psf, &cfg, 0.0, 0.0, 10).unwrap().frame;
        assert_eq!(a, b);
        assert_ne!(a, other);
        // Far from the scatterer only noise remains.
        let spl = g.samples_per_line;
        let far: Vec<f64> = (0..g.scanlines).map(|i| a.values()[i * spl + 5]).collect();
        let var = far.iter().map(|v| v * v).sum::<f64>() / far.len() as f64;
        assert!(var.sqrt() > 0.02 && var.sqrt() < 0.1, "{}", var.sqrt());
    }

    #[test]
    fn envelope_of_gaussian_windowed_cosine() {
        let fs = 40e6;
        let f0 = 5e6;
        let n = 512;
        let sigma = 40.0;
        let c = n as f64 / 2.0;
        let window: Vec<f64> = (0..n)
            .map(|k| (-(k as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let line: Vec<f64> = (0..n)
            .map(|k| window[k] * (2.0 * std::f64::consts::PI * f0 * k as f64 / fs).cos())
            .collect();
        let env = analytic_envelope(&line);
        for k in n / 10..n - n / 10 {
            if window[k] > 1e-3 {
                assert!((env[k] - window[k]).abs() <= 0.02 * window[k], "k={k}");
            }
        }
    }

    #[test]
    fn envelope_is_sign_invariant_and_zero_safe() {
        let g = RasterGeometry {
            scanlines: 2,
            samples_per_line: 50,
            pitch_mm: 0.2,
            fs_hz: 25e6,
        };
        let vals: Vec<f64> = (0..100).map(|k| ((k * 7919) % 31) as f64 / 31.0 - 0.5).collect();
        let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
        let a = envelope(&RFFrame::new(g, 5e6, 0.0, 0.0, vals).unwrap()).unwrap();
        let b = envelope(&RFFrame::new(g, 5e6, 0.0, 0.0, neg).unwrap()).unwrap();
        assert_eq!(a.values, b.values);
        let z = envelope(&RFFrame::new(g, 5e6, 0.0, 0.0, vec![0.0; 100]).unwrap()).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(a.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn analytic_real_part_reproduces_input() {
        let line: Vec<f64> = (0..37).map(|k| (k as f64 * 0.7).sin() * (k % 5) as f64).collect();
        let a = AnalyticSignal::new(line.len()).compute(&line);
        for (x, c) in line.iter().zip(&a) {
            assert!((x - c.re).abs() < 1e-12);
        }
    }

    #[test]
    fn log_compress_reference_points() {
        let g = RasterGeometry {
            scanlines: 1,
            samples_per_line: 4,
            pitch_mm: 0.2,
            fs_hz: 25e6,
        };
        let dr = 60.0;
        let env = Envelope {
            geometry: g,
            steer_deg: 0.0,
            rotate_deg: 0.0,
            values: vec![2.0, 2.0 * 10f64.powf(-dr / 20.0), 2.0 * 10f64.powf(-1.5), 0.0],
        };
        let b = log_compress(&env, dr).unwrap();
        assert_eq!(b.values()[0], 1.0);
        assert!(b.values()[1].abs() < 1e-12);
        assert!((b.values()[2] - 0.5).abs() < 1e-12);
        assert_eq!(b.values()[3], 0.0);
        let zero = Envelope {
            values: vec![0.0; 4],
            ..env
        };
        assert!(log_compress(&zero, dr).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bmode_is_deterministic() {
        let cfg = ImagingConfig {
            noise_sigma: 0.02,
            ..test_config()
        };
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let c = ScattererCloud::new(
            vec![point(0.0, 4.0, 1.0), point(0.5, 2.0, 0.4)],
            domain(&cfg),
        )
        .unwrap();
        let a = simulate_bmode(Scene::Cloud(&c), &psf, &cfg, 3.0, 0.0, 5).unwrap();
        let b = simulate_bmode(Scene::Cloud(&c), &psf, &cfg, 3.0, 0.0, 5).unwrap();
        assert_eq!(a, b);
    }
}
