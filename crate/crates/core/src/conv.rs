//! Spatially varying convolution by depth bands.
//!
//! The source raster is split by piecewise-linear weights (1 at a band's
//! center, 0 at its neighbors' centers, constant beyond the outermost
//! centers), each weighted copy is convolved with its band kernel and the
//! results are summed:
//!
//! ```text
//! out = sum_b K_b * (w_b . src)
//! ```
//!
//! The weights form a partition of unity, so a single scatterer at a band
//! center sees exactly that band's kernel and one band reduces to a plain
//! 2D convolution. Out-of-raster contributions are dropped. Convolution is
//! evaluated directly in space: kernels are small, and unsteered kernels are
//! separable, which beats padding every band out to an FFT size.

use crate::error::{Error, Result};
use crate::model::RasterGeometry;
use crate::psf::PsfStack;

#[derive(Clone, Debug)]
enum Kernel {
    /// Outer product of a lateral and an axial profile.
    Separable { lateral: Vec<f64>, axial: Vec<f64> },
    /// Dense `[lateral][axial]` taps.
    Dense {
        lateral_half: usize,
        axial_half: usize,
        taps: Vec<f64>,
    },
}

impl Kernel {
    fn axial_half(&self) -> usize {
        match self {
            Kernel::Separable { axial, .. } => axial.len() / 2,
            Kernel::Dense { axial_half, .. } => *axial_half,
        }
    }
}

#[derive(Clone, Debug)]
struct Band {
    kernel: Kernel,
    /// First sample with nonzero blend weight.
    lo: usize,
    /// Blend weights for samples `lo..lo + weights.len()`.
    weights: Vec<f64>,
}

/// Linear operator `src -> sum_b K_b * (w_b . src)` on one raster, with its
/// exact adjoint.
#[derive(Clone, Debug)]
pub struct BandedConvolution {
    geometry: RasterGeometry,
    bands: Vec<Band>,
    steer_deg: f64,
}

/// Piecewise-linear blend weight of band `b` at depth `z`.
pub fn blend_weight(z: f64, b: usize, n_bands: usize, band_height: f64) -> f64 {
    let center = (b as f64 + 0.5) * band_height;
    if n_bands == 1 {
        return 1.0;
    }
    if (b == 0 && z <= center) || (b == n_bands - 1 && z >= center) {
        return 1.0;
    }
    (1.0 - (z - center).abs() / band_height).max(0.0)
}

impl BandedConvolution {
    /// Builds the operator for `psf` on `geometry`. A nonzero `steer_deg`
    /// shears each kernel laterally by `tan(steer)` per unit axial offset.
    pub fn new(psf: &PsfStack, geometry: &RasterGeometry, steer_deg: f64) -> Result<Self> {
        if !(steer_deg.abs() <= 30.0) {
            return Err(Error::param("steer_deg", format!("|{steer_deg}| exceeds 30")));
        }
        let dz = geometry.dz_mm();
        if (psf.dz_mm() - dz).abs() > 1e-9 * dz || (psf.dx_mm() - geometry.pitch_mm).abs() > 1e-9 {
            return Err(Error::param("psf", "kernel sampling does not match the raster"));
        }
        let n = psf.bands().len();
        let h = psf.band_height_mm();
        let spl = geometry.samples_per_line;
        let tan = steer_deg.to_radians().tan();
        let mut bands = Vec::with_capacity(n);
        for (b, band) in psf.bands().iter().enumerate() {
            let all: Vec<f64> = (0..spl)
                .map(|s| blend_weight(s as f64 * dz, b, n, h))
                .collect();
            let lo = all.iter().position(|&w| w > 0.0).unwrap_or(spl);
            let hi = all.iter().rposition(|&w| w > 0.0).map_or(lo, |i| i + 1);
            let weights = all[lo..hi].to_vec();
            let kernel = if steer_deg == 0.0 {
                Kernel::Separable {
                    lateral: band.lateral.clone(),
                    axial: band.axial.clone(),
                }
            } else {
                let mh = band.axial_half();
                let sx = band.sigma_x_mm;
                let shift_max = mh as f64 * dz * tan.abs();
                let lh = ((3.0 * sx + shift_max) / geometry.pitch_mm).floor() as usize;
                let mut taps = vec![0.0; (2 * lh + 1) * (2 * mh + 1)];
                for l in 0..=2 * lh {
                    for m in 0..=2 * mh {
                        let dm = m as f64 - mh as f64;
                        let x = (l as f64 - lh as f64) * geometry.pitch_mm - dm * dz * tan;
                        if x.abs() <= 3.0 * sx + 1e-12 {
                            taps[l * (2 * mh + 1) + m] =
                                (-x * x / (2.0 * sx * sx)).exp() * band.axial[m];
                        }
                    }
                }
                Kernel::Dense {
                    lateral_half: lh,
                    axial_half: mh,
                    taps,
                }
            };
            bands.push(Band {
                kernel,
                lo,
                weights,
            });
        }
        Ok(BandedConvolution {
            geometry: *geometry,
            bands,
            steer_deg,
        })
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn steer_deg(&self) -> f64 {
        self.steer_deg
    }

    /// `out = H src`, both scanline-major rasters.
    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.geometry.len()];
        self.apply_into(src, &mut out);
        out
    }

    pub fn apply_into(&self, src: &[f64], out: &mut [f64]) {
        let g = &self.geometry;
        assert_eq!(src.len(), g.len());
        assert_eq!(out.len(), g.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let lines = g.scanlines;
        let spl = g.samples_per_line;
        for band in &self.bands {
            let n = band.weights.len();
            if n == 0 {
                continue;
            }
            let mh = band.kernel.axial_half();
            let out_lo = band.lo.saturating_sub(mh);
            let out_hi = (band.lo + n + mh).min(spl);
            let span = out_hi - out_lo;
            // Weighted band source, line by line.
            let mut w_src = vec![0.0; lines * n];
            for i in 0..lines {
                let s = &src[i * spl + band.lo..i * spl + band.lo + n];
                let d = &mut w_src[i * n..(i + 1) * n];
                for ((d, s), w) in d.iter_mut().zip(s).zip(&band.weights) {
                    *d = s * w;
                }
            }
            match &band.kernel {
                Kernel::Separable { lateral, axial } => {
                    let mut tmp = vec![0.0; lines * span];
                    for i in 0..lines {
                        conv_axial(
                            &w_src[i * n..(i + 1) * n],
                            band.lo,
                            axial,
                            &mut tmp[i * span..(i + 1) * span],
                            out_lo,
                        );
                    }
                    let lh = lateral.len() / 2;
                    for i in 0..lines {
                        let dst = &mut out[i * spl + out_lo..i * spl + out_hi];
                        for (k, c) in lateral.iter().enumerate() {
                            // out[i] += c[k] * tmp[i - (k - lh)]
                            let j = i as isize - (k as isize - lh as isize);
                            if j < 0 || j >= lines as isize {
                                continue;
                            }
                            let t = &tmp[j as usize * span..(j as usize + 1) * span];
                            for (d, v) in dst.iter_mut().zip(t) {
                                *d += c * v;
                            }
                        }
                    }
                }
                Kernel::Dense {
                    lateral_half,
                    axial_half,
                    taps,
                } => {
                    let na = 2 * axial_half + 1;
                    let mut row = vec![0.0; span];
                    for k in 0..=2 * lateral_half {
                        let col = &taps[k * na..(k + 1) * na];
                        if col.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        for i in 0..lines {
                            let j = i as isize - (k as isize - *lateral_half as isize);
                            if j < 0 || j >= lines as isize {
                                continue;
                            }
                            let j = j as usize;
                            row.iter_mut().for_each(|v| *v = 0.0);
                            conv_axial(&w_src[j * n..(j + 1) * n], band.lo, col, &mut row, out_lo);
                            let dst = &mut out[i * spl + out_lo..i * spl + out_hi];
                            for (d, v) in dst.iter_mut().zip(&row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = H^T r`.
    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.geometry.len()];
        self.adjoint_into(r, &mut out);
        out
    }

    pub fn adjoint_into(&self, r: &[f64], out: &mut [f64]) {
        let g = &self.geometry;
        assert_eq!(r.len(), g.len());
        assert_eq!(out.len(), g.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let lines = g.scanlines;
        let spl = g.samples_per_line;
        for band in &self.bands {
            let n = band.weights.len();
            if n == 0 {
                continue;
            }
            let mh = band.kernel.axial_half();
            let out_lo = band.lo.saturating_sub(mh);
            let out_hi = (band.lo + n + mh).min(spl);
            let span = out_hi - out_lo;
            let mut acc = vec![0.0; lines * n];
            match &band.kernel {
                Kernel::Separable { lateral, axial } => {
                    let lh = lateral.len() / 2;
                    let mut tmp = vec![0.0; lines * span];
                    for j in 0..lines {
                        let dst = &mut tmp[j * span..(j + 1) * span];
                        for (k, c) in lateral.iter().enumerate() {
                            let i = j as isize + (k as isize - lh as isize);
                            if i < 0 || i >= lines as isize {
                                continue;
                            }
                            let s = &r[i as usize * spl + out_lo..i as usize * spl + out_hi];
                            for (d, v) in dst.iter_mut().zip(s) {
                                *d += c * v;
                            }
                        }
                    }
                    for j in 0..lines {
                        corr_axial(
                            &tmp[j * span..(j + 1) * span],
                            out_lo,
                            axial,
                            &mut acc[j * n..(j + 1) * n],
                            band.lo,
                        );
                    }
                }
                Kernel::Dense {
                    lateral_half,
                    axial_half,
                    taps,
                } => {
                    let na = 2 * axial_half + 1;
                    for k in 0..=2 * lateral_half {
                        let col = &taps[k * na..(k + 1) * na];
                        if col.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        for j in 0..lines {
                            let i = j as isize + (k as isize - *lateral_half as isize);
                            if i < 0 || i >= lines as isize {
                                continue;
                            }
                            let i = i as usize;
                            corr_axial(
                                &r[i * spl + out_lo..i * spl + out_hi],
                                out_lo,
                                col,
                                &mut acc[j * n..(j + 1) * n],
                                band.lo,
                            );
                        }
                    }
                }
            }
            for j in 0..lines {
                let dst = &mut out[j * spl + band.lo..j * spl + band.lo + n];
                let a = &acc[j * n..(j + 1) * n];
                for ((d, a), w) in dst.iter_mut().zip(a).zip(&band.weights) {
                    *d += a * w;
                }
            }
        }
    }
}

/// `dst[s - dst_lo] += sum_m k[m] * src[s - (m - h) - src_lo]` for every
/// valid `s`, where `src` occupies absolute samples `src_lo..` and `dst`
/// absolute samples `dst_lo..`.
fn conv_axial(src: &[f64], src_lo: usize, kernel: &[f64], dst: &mut [f64], dst_lo: usize) {
    let h = kernel.len() / 2;
    let n_dst = dst.len() as isize;
    for (m, &k) in kernel.iter().enumerate() {
        if k == 0.0 {
            continue;
        }
        // absolute output index = absolute src index + (m - h)
        let offset = src_lo as isize + m as isize - h as isize - dst_lo as isize;
        let start = (-offset).max(0) as usize;
        let end = ((n_dst - offset).min(src.len() as isize)).max(0) as usize;
        if start >= end {
            continue;
        }
        let d = &mut dst[(start as isize + offset) as usize..(end as isize + offset) as usize];
        for (d, s) in d.iter_mut().zip(&src[start..end]) {
            *d += k * s;
        }
    }
}

/// Adjoint of [`conv_axial`]: `dst[t - dst_lo] += sum_m k[m] * src[t + (m - h) - src_lo]`.
fn corr_axial(src: &[f64], src_lo: usize, kernel: &[f64], dst: &mut [f64], dst_lo: usize) {
    let h = kernel.len() / 2;
    let n_src = src.len() as isize;
    for (m, &k) in kernel.iter().enumerate() {
        if k == 0.0 {
            continue;
        }
        // src index (relative) = dst index (relative) + offset
        let offset = dst_lo as isize + m as isize - h as isize - src_lo as isize;
        let start = (-offset).max(0) as usize;
        let end = ((n_src - offset).min(dst.len() as isize)).max(0) as usize;
        if start >= end {
            continue;
        }
        let s = &src[(start as isize + offset) as usize..(end as isize + offset) as usize];
        for (d, s) in dst[start..end].iter_mut().zip(s) {
            *d += k * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImagingConfig;
    use crate::psf::make_psf_stack;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ImagingConfig {
        ImagingConfig {
            n_lines: 24,
            depth_mm: 4.0,
            aperture_mm: 4.0,
            ..ImagingConfig::default()
        }
    }

    /// Direct evaluation of the banded sum from its definition, independent
    /// of the line/tap loop structure above.
    fn reference(psf: &PsfStack, geom: &RasterGeometry, src: &[f64]) -> Vec<f64> {
        let lines = geom.scanlines as isize;
        let spl = geom.samples_per_line as isize;
        let n = psf.bands().len();
        let mut out = vec![0.0; geom.len()];
        for (b, band) in psf.bands().iter().enumerate() {
            let lh = band.lateral_half() as isize;
            let mh = band.axial_half() as isize;
            for i in 0..lines {
                for s in 0..spl {
                    let w = blend_weight(s as f64 * geom.dz_mm(), b, n, psf.band_height_mm());
                    let v = src[(i * spl + s) as usize] * w;
                    if v == 0.0 {
                        continue;
                    }
                    for l in -lh..=lh {
                        for m in -mh..=mh {
                            let (oi, os) = (i + l, s + m);
                            if oi < 0 || oi >= lines || os < 0 || os >= spl {
                                continue;
                            }
                            out[(oi * spl + os) as usize] += v * band.value(l, m);
                        }
                    }
                }
            }
        }
        out
    }

    fn random_raster(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn blend_weights_partition_unity() {
        for n in 1..6 {
            for k in 0..200 {
                let z = k as f64 * 0.05;
                let s: f64 = (0..n).map(|b| blend_weight(z, b, n, 10.0 / n as f64)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_direct_definition() {
        let cfg = small_config();
        let psf = make_psf_stack(&cfg, 3).unwrap();
        let geom = cfg.geometry();
        let op = BandedConvolution::new(&psf, &geom, 0.0).unwrap();
        let src = random_raster(geom.len(), 1);
        let a = op.apply(&src);
        let b = reference(&psf, &geom, &src);
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_is_consistent() {
        let cfg = small_config();
        let psf = make_psf_stack(&cfg, 4).unwrap();
        let geom = cfg.geometry();
        for steer in [0.0, 10.0, -20.0] {
            let op = BandedConvolution::new(&psf, &geom, steer).unwrap();
            for seed in 0..5 {
                let g = random_raster(geom.len(), 10 + seed);
                let f = random_raster(geom.len(), 100 + seed);
                let lhs: f64 = op.apply(&g).iter().zip(&f).map(|(a, b)| a * b).sum();
                let rhs: f64 = g.iter().zip(&op.adjoint(&f)).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
            }
        }
    }

    #[test]
    fn steered_kernel_shears_laterally() {
        let cfg = small_config();
        let psf = make_psf_stack(&cfg, 1).unwrap();
        let geom = cfg.geometry();
        let op = BandedConvolution::new(&psf, &geom, 20.0).unwrap();
        let spl = geom.samples_per_line;
        let (ci, cs) = (12usize, spl / 2);
        let mut src = vec![0.0; geom.len()];
        src[ci * spl + cs] = 1.0;
        let out = op.apply(&src);
        // Centroid of |out| along the lateral axis drifts with axial offset.
        let centroid = |s: usize| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..geom.scanlines {
                let v = out[i * spl + s].abs();
                num += v * i as f64;
                den += v;
            }
            num / den
        };
        let mh = psf.bands()[0].axial_half();
        let below = centroid(cs + mh / 2);
        let above = centroid(cs - mh / 2);
        assert!(below > above, "{above} {below}");
        assert_eq!(out[ci * spl + cs], 1.0);
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = small_config();
        let psf = make_psf_stack(&cfg, 2).unwrap();
        let geom = cfg.geometry();
        let op = BandedConvolution::new(&psf, &geom, 5.0).unwrap();
        assert!(op.apply(&vec![0.0; geom.len()]).iter().all(|&v| v == 0.0));
    }
}
