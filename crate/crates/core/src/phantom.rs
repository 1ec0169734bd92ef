//! Scatterer clouds, intensity-driven amplitudes and numerical phantoms.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::forward::splat_bilinear;
use crate::model::{Bounds, RasterGeometry, Scatterer, ScatterGrid, ScattererCloud};

pub const DEFAULT_DENSITY_PER_MM2: f64 = 20.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.05;
pub const DEFAULT_SIGMA_MAX: f64 = 0.30;

/// Rectangle in the `(x, z)` image plane, mm.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlaneExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl PlaneExtent {
    pub fn centered(cx: f64, cz: f64, width: f64, height: f64) -> Self {
        PlaneExtent {
            x_min: cx - width / 2.0,
            x_max: cx + width / 2.0,
            z_min: cz - height / 2.0,
            z_max: cz + height / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.z_min + self.z_max),
        )
    }

    /// 3D domain with the given elevational half-thickness.
    pub fn with_slab(&self, y_half: f64) -> Result<Bounds> {
        Bounds::new(
            (self.x_min, self.x_max),
            (-y_half, y_half),
            (self.z_min, self.z_max),
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.width() > 0.0 && self.height() > 0.0) {
            return Err(Error::param("extent", "must have positive width and height"));
        }
        Ok(())
    }
}

/// Gray-level image `I(x)` in `[0, 1]` covering a physical extent.
///
/// Pixel `(r, c)` is centered at
/// `(x_min + (c + 0.5) * width / cols, z_min + (r + 0.5) * height / rows)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    extent: PlaneExtent,
}

impl IntensityImage {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, extent: PlaneExtent) -> Result<Self> {
        extent.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::param("rows/cols", "must be positive"));
        }
        if values.len() != rows * cols {
            return Err(Error::param("values", "length must equal rows*cols"));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param(
                format!("values[{i}]"),
                format!("{} outside [0, 1]", values[i]),
            ));
        }
        Ok(IntensityImage {
            rows,
            cols,
            values,
            extent,
        })
    }

    /// Constant image.
    pub fn constant(rows: usize, cols: usize, value: f64, extent: PlaneExtent) -> Result<Self> {
        IntensityImage::new(rows, cols, vec![value; rows * cols], extent)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn extent(&self) -> &PlaneExtent {
        &self.extent
    }
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn pixel_dx(&self) -> f64 {
        self.extent.width() / self.cols as f64
    }

    pub fn pixel_dz(&self) -> f64 {
        self.extent.height() / self.rows as f64
    }

    pub fn pixel_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.extent.x_min + (c as f64 + 0.5) * self.pixel_dx(),
            self.extent.z_min + (r as f64 + 0.5) * self.pixel_dz(),
        )
    }

    /// Bilinear interpolation between pixel centers, clamped at the border.
    pub fn sample(&self, x: f64, z: f64) -> f64 {
        let u = ((x - self.extent.x_min) / self.pixel_dx() - 0.5).clamp(0.0, (self.cols - 1) as f64);
        let v = ((z - self.extent.z_min) / self.pixel_dz() - 0.5).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (u.floor() as usize).min(self.cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(self.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let top = self.get(r0, c0) * (1.0 - fu) + self.get(r0, c1) * fu;
        let bottom = self.get(r1, c0) * (1.0 - fu) + self.get(r1, c1) * fu;
        top * (1.0 - fv) + bottom * fv
    }

    /// The image as a `.sgrid`-ready grid.
    pub fn to_grid(&self) -> ScatterGrid {
        let (ox, oz) = self.pixel_center(0, 0);
        ScatterGrid::new(
            self.rows,
            self.cols,
            self.pixel_dz(),
            self.pixel_dx(),
            ox,
            oz,
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("intensity image satisfies grid invariants")
    }
}

/// `N = round(density * lateral * axial)` scatterers placed uniformly at
/// random over `domain` (including its elevational range), amplitudes 1.
pub fn generate_cloud(domain: &Bounds, density_per_mm2: f64, rng_seed: u64) -> Result<ScattererCloud> {
    if !(density_per_mm2 > 0.0 && density_per_mm2.is_finite()) {
        return Err(Error::param("density_per_mm2", "must be positive"));
    }
    let n = (density_per_mm2 * domain.lateral_extent() * domain.axial_extent()).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let points = (0..n)
        .map(|_| {
            let x_mm = uniform(domain.x_min, domain.x_max);
            let y_mm = uniform(domain.y_min, domain.y_max);
            let z_mm = uniform(domain.z_min, domain.z_max);
            Scatterer {
                x_mm,
                y_mm,
                z_mm,
                amp: 1.0,
            }
        })
        .collect();
    ScattererCloud::new(points, *domain)
}

/// Amplitude spread as a function of intensity:
/// `sigma(I) = -|((sigma_max - sigma_min) / 2) (I - 1/2)| + sigma_max`.
pub fn sigma_of(intensity: f64, sigma_min: f64, sigma_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::param("intensity", format!("{intensity} outside [0, 1]")));
    }
    if !(sigma_min > 0.0 && sigma_min <= sigma_max && sigma_max.is_finite()) {
        return Err(Error::param(
            "sigma_min/sigma_max",
            "require 0 < sigma_min <= sigma_max",
        ));
    }
    Ok(-((sigma_max - sigma_min) / 2.0 * (intensity - 0.5)).abs() + sigma_max)
}

/// Cloud with sampled amplitudes and the fraction of draws that were clipped.
#[derive(Clone, Debug)]
pub struct SampledAmplitudes {
    pub cloud: ScattererCloud,
    pub clipped_fraction: f64,
}

/// Draws `a_i ~ Normal(I(x_i), sigma(I(x_i)))` for every scatterer, with `I`
/// bilinearly interpolated at the scatterer's `(x, z)`, then clamps to
/// `[0, 1]`.
pub fn sample_amplitudes(
    cloud: &ScattererCloud,
    image: &IntensityImage,
    sigma_min: f64,
    sigma_max: f64,
    rng_seed: u64,
) -> Result<SampledAmplitudes> {
    sigma_of(0.5, sigma_min, sigma_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut clipped = 0usize;
    let amps: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| {
            let mu = image.sample(p.x_mm, p.z_mm);
            let sigma = sigma_of(mu, sigma_min, sigma_max).expect("validated above");
            let raw = Normal::new(mu, sigma).expect("sigma positive").sample(&mut rng);
            let a = clip_amplitude(raw);
            if a != raw {
                clipped += 1;
            }
            a
        })
        .collect();
    Ok(SampledAmplitudes {
        cloud: cloud.with_amplitudes(&amps)?,
        clipped_fraction: clipped as f64 / cloud.len().max(1) as f64,
    })
}

/// Clamps a raw amplitude draw into `[0, 1]`.
pub fn clip_amplitude(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Centered disk of intensity `background * contrast` on a constant
/// `background`, sampled at pixel centers.
pub fn inclusion_phantom(
    extent: PlaneExtent,
    pixel_mm: f64,
    radius_mm: f64,
    contrast: f64,
    background: f64,
) -> Result<IntensityImage> {
    extent.validate()?;
    if !(pixel_mm > 0.0) {
        return Err(Error::param("pixel_mm", "must be positive"));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::param("radius_mm", "must be positive"));
    }
    let inside = background * contrast;
    if !(0.0..=1.0).contains(&background) || !(0.0..=1.0).contains(&inside) {
        return Err(Error::param("background/contrast", "intensities must lie in [0, 1]"));
    }
    let cols = (extent.width() / pixel_mm).round().max(1.0) as usize;
    let rows = (extent.height() / pixel_mm).round().max(1.0) as usize;
    let (cx, cz) = extent.center();
    let mut img = IntensityImage::constant(rows, cols, background, extent)?;
    for r in 0..rows {
        for c in 0..cols {
            let (x, z) = img.pixel_center(r, c);
            if (x - cx).powi(2) + (z - cz).powi(2) <= radius_mm * radius_mm {
                img.values[r * cols + c] = inside;
            }
        }
    }
    Ok(img)
}

/// Shape-count and background controls for [`procedural_image`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProceduralSpec {
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub background: f64,
    pub pixel_mm: f64,
}

impl Default for ProceduralSpec {
    fn default() -> Self {
        ProceduralSpec {
            min_shapes: 3,
            max_shapes: 10,
            background: 0.5,
            pixel_mm: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cx: f64, cz: f64, r: f64 },
    Rect { x0: f64, x1: f64, z0: f64, z1: f64 },
    Ellipse { cx: f64, cz: f64, a: f64, b: f64, angle: f64 },
}

impl Shape {
    fn contains(&self, x: f64, z: f64) -> bool {
        match *self {
            Shape::Disk { cx, cz, r } => (x - cx).powi(2) + (z - cz).powi(2) <= r * r,
            Shape::Rect { x0, x1, z0, z1 } => x >= x0 && x <= x1 && z >= z0 && z <= z1,
            Shape::Ellipse { cx, cz, a, b, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dz) = (x - cx, z - cz);
                let u = c * dx + s * dz;
                let v = -s * dx + c * dz;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
        }
    }
}

/// Random additive/multiplicative composition of disks, rectangles and
/// ellipses, clamped to `[0, 1]`.
pub fn procedural_image(rng_seed: u64, extent: PlaneExtent, spec: &ProceduralSpec) -> Result<IntensityImage> {
    extent.validate()?;
    if spec.min_shapes > spec.max_shapes {
        return Err(Error::param("min_shapes", "exceeds max_shapes"));
    }
    if !(0.0..=1.0).contains(&spec.background) {
        return Err(Error::param("background", "outside [0, 1]"));
    }
    if !(spec.pixel_mm > 0.0) {
        return Err(Error::param("pixel_mm", "must be positive"));
    }
    let cols = (extent.width() / spec.pixel_mm).round().max(1.0) as usize;
    let rows = (extent.height() / spec.pixel_mm).round().max(1.0) as usize;
    let mut img = IntensityImage::constant(rows, cols, spec.background, extent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
    let scale = extent.width().min(extent.height());
    for _ in 0..count {
        let cx = rng.random_range(extent.x_min..=extent.x_max);
        let cz = rng.random_range(extent.z_min..=extent.z_max);
        let size = rng.random_range(0.05..=0.3) * scale;
        let shape = match rng.random_range(0..3u8) {
            0 => Shape::Disk { cx, cz, r: size },
            1 => {
                let aspect = rng.random_range(0.3..=3.0);
                Shape::Rect {
                    x0: cx - size,
                    x1: cx + size,
                    z0: cz - size * aspect,
                    z1: cz + size * aspect,
                }
            }
            _ => Shape::Ellipse {
                cx,
                cz,
                a: size,
                b: size * rng.random_range(0.2..=1.0),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
        };
        let multiplicative: bool = rng.random();
        let level: f64 = rng.random();
        for r in 0..rows {
            for c in 0..cols {
                let (x, z) = img.pixel_center(r, c);
                if shape.contains(x, z) {
                    let v = &mut img.values[r * cols + c];
                    if multiplicative {
                        *v *= 2.0 * level;
                    } else {
                        *v += level - 0.5;
                    }
                }
            }
        }
    }
    img.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(img)
}

/// Result of scanning a directory of grayscale images.
#[derive(Debug)]
pub struct IngestedImages {
    /// `(file stem, image)` in file-name order.
    pub images: Vec<(String, IntensityImage)>,
    pub skipped: Vec<String>,
}

/// Loads every 8- or 16-bit grayscale PGM/PNG file in `dir`, normalized by
/// its format maximum and assigned `extent`. Unreadable or non-grayscale
/// files are skipped with a warning.
pub fn ingest_intensity_images(dir: impl AsRef<Path>, extent: PlaneExtent) -> Result<IngestedImages> {
    extent.validate()?;
    let mut entries: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in entries {
        let name = path.display().to_string();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "pgm")) {
            continue;
        }
        match decode_gray(&path, extent) {
            Ok(img) => {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image")
                    .to_string();
                images.push((stem, img));
            }
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                skipped.push(name);
            }
        }
    }
    Ok(IngestedImages { images, skipped })
}

fn decode_gray(path: &Path, extent: PlaneExtent) -> Result<IntensityImage> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        other => {
            return Err(Error::format(
                path.display().to_string(),
                format!("not grayscale ({:?})", other.color()),
            ))
        }
    };
    IntensityImage::new(h, w, values, extent)
}

/// Target lattice for [`rasterize_cloud`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub dz_mm: f64,
    pub dx_mm: f64,
    pub origin_x_mm: f64,
    pub origin_z_mm: f64,
}

impl GridSpec {
    /// The pixel lattice of an RF/B-mode raster.
    pub fn from_raster(g: &RasterGeometry) -> Self {
        GridSpec {
            rows: g.samples_per_line,
            cols: g.scanlines,
            dz_mm: g.dz_mm(),
            dx_mm: g.pitch_mm,
            origin_x_mm: g.x0_mm(),
            origin_z_mm: 0.0,
        }
    }
}

/// Rasterized grid and bookkeeping for mass conservation.
#[derive(Clone, Debug)]
pub struct Rasterized {
    pub grid: ScatterGrid,
    /// Sum of accumulated amplitudes before clamping.
    pub mass_before_clamp: f64,
    /// Scatterers outside the grid lattice.
    pub dropped: usize,
}

/// Bilinear splatting of amplitudes onto `spec`, clamping to `[0, 1]` after
/// accumulation.
pub fn rasterize_cloud(cloud: &ScattererCloud, spec: &GridSpec) -> Result<Rasterized> {
    let mut acc = vec![0.0f64; spec.rows * spec.cols];
    let mut dropped = 0;
    for p in cloud.points() {
        let u = (p.x_mm - spec.origin_x_mm) / spec.dx_mm;
        let v = (p.z_mm - spec.origin_z_mm) / spec.dz_mm;
        // Row-major: outer index is the row (depth), inner the column.
        if !splat_bilinear(&mut acc, spec.rows, spec.cols, v, u, p.amp) {
            dropped += 1;
        }
    }
    let mass_before_clamp = acc.iter().sum();
    let values = acc.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    let grid = ScatterGrid::new(
        spec.rows,
        spec.cols,
        spec.dz_mm,
        spec.dx_mm,
        spec.origin_x_mm,
        spec.origin_z_mm,
        values,
    )?;
    Ok(Rasterized {
        grid,
        mass_before_clamp,
        dropped,
    })
}

/// One scatterer per nonzero pixel, at the pixel center, in the `y = 0`
/// plane. The domain spans the pixel centers, so rotations pivot about the
/// grid center.
pub fn grid_to_cloud(grid: &ScatterGrid) -> Result<ScattererCloud> {
    let domain = Bounds::new(
        (grid.x_of(0), grid.x_of(grid.cols() - 1)),
        (0.0, 0.0),
        (grid.z_of(0), grid.z_of(grid.rows() - 1)),
    )?;
    let mut points = Vec::new();
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let a = grid.get(r, c);
            if a > 0.0 {
                points.push(Scatterer {
                    x_mm: grid.x_of(c),
                    y_mm: 0.0,
                    z_mm: grid.z_of(r),
                    amp: a as f64,
                });
            }
        }
    }
    ScattererCloud::new(points, domain)
}
