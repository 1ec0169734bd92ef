//! Image-quality metrics and per-angle comparison reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BModeImage, RasterGeometry};

pub const DEFAULT_BINS: usize = 50;

/// A labeled set of raster pixels (scanline-major indices).
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    label: String,
    indices: Vec<usize>,
}

impl Roi {
    /// Pixels of an image with `len` pixels; must be nonempty and in range.
    pub fn from_indices(label: impl Into<String>, indices: Vec<usize>, len: usize) -> Result<Self> {
        let label = label.into();
        if indices.is_empty() {
            return Err(Error::param(format!("roi `{label}`"), "is empty"));
        }
        if let Some(i) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::param(
                format!("roi `{label}`"),
                format!("pixel {i} outside an image of {len} pixels"),
            ));
        }
        Ok(Roi { label, indices })
    }

    /// Scanlines `lines` by samples `samples` (half-open ranges).
    pub fn rect(
        label: impl Into<String>,
        geometry: &RasterGeometry,
        lines: std::ops::Range<usize>,
        samples: std::ops::Range<usize>,
    ) -> Result<Self> {
        let label = label.into();
        if lines.end > geometry.scanlines || samples.end > geometry.samples_per_line {
            return Err(Error::param(format!("roi `{label}`"), "rectangle exceeds the raster"));
        }
        let spl = geometry.samples_per_line;
        let indices = lines
            .flat_map(|i| samples.clone().map(move |j| i * spl + j))
            .collect();
        Roi::from_indices(label, indices, geometry.len())
    }

    /// Whole image.
    pub fn full(geometry: &RasterGeometry) -> Self {
        Roi {
            label: "full".into(),
            indices: (0..geometry.len()).collect(),
        }
    }

    /// Pixels whose centers satisfy `r_in <= distance to (cx, cz) < r_out`.
    pub fn annulus_mm(
        label: impl Into<String>,
        geometry: &RasterGeometry,
        center: (f64, f64),
        r_in: f64,
        r_out: f64,
    ) -> Result<Self> {
        let label = label.into();
        if !(r_in >= 0.0 && r_out > r_in) {
            return Err(Error::param(format!("roi `{label}`"), "require 0 <= r_in < r_out"));
        }
        let spl = geometry.samples_per_line;
        let mut indices = Vec::new();
        for i in 0..geometry.scanlines {
            let dx = geometry.x_of(i) - center.0;
            for j in 0..spl {
                let dz = geometry.z_of(j) - center.1;
                let d = (dx * dx + dz * dz).sqrt();
                if d >= r_in && d < r_out {
                    indices.push(i * spl + j);
                }
            }
        }
        Roi::from_indices(label, indices, geometry.len())
    }

    /// Pixels whose centers lie within `radius` of `center`.
    pub fn disk_mm(
        label: impl Into<String>,
        geometry: &RasterGeometry,
        center: (f64, f64),
        radius: f64,
    ) -> Result<Self> {
        let r_out = radius.next_up();
        Roi::annulus_mm(label, geometry, center, 0.0, r_out)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn values(&self, image: &[f64]) -> Result<Vec<f64>> {
        if let Some(&i) = self.indices.iter().max() {
            if i >= image.len() {
                return Err(Error::param(
                    format!("roi `{}`", self.label),
                    "does not fit the image",
                ));
            }
        }
        Ok(self.indices.iter().map(|&i| image[i]).collect())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    // A constant region has zero spread even when the rounded mean differs
    // from its value.
    if v.iter().all(|&x| x == v[0]) {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Mean over population standard deviation within `roi`.
pub fn snr(image: &[f64], roi: &Roi) -> Result<f64> {
    let (m, s) = mean_std(&roi.values(image)?);
    if s == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "SNR of constant region `{}`",
            roi.label
        )));
    }
    Ok(m / s)
}

/// Mean image intensity within `roi`.
pub fn mii(image: &[f64], roi: &Roi) -> Result<f64> {
    Ok(mean_std(&roi.values(image)?).0)
}

/// `|mu_b - mu_d| / (sigma_b + sigma_d)`.
pub fn cnr(image: &[f64], bright: &Roi, dark: &Roi) -> Result<f64> {
    let (mb, sb) = mean_std(&bright.values(image)?);
    let (md, sd) = mean_std(&dark.values(image)?);
    if sb + sd == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "CNR of constant regions `{}` and `{}`",
            bright.label, dark.label
        )));
    }
    Ok((mb - md).abs() / (sb + sd))
}

/// `100 |estimate / reference - 1|`, in percent.
pub fn normalized_error(estimate: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedMetric(
            "normalized error against a zero reference".into(),
        ));
    }
    Ok(100.0 * (estimate / reference - 1.0).abs())
}

fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    let total = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= total);
    h
}

/// Half-normalized chi-squared distance between the `[0, 1]` histograms of
/// two pixel sets; `0` for identical histograms, `1` for disjoint ones.
pub fn chi2_hist(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::param("bins", "must be positive"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("images", "histogram of an empty pixel set"));
    }
    let (p, q) = (histogram(a, bins), histogram(b, bins));
    Ok(0.5
        * p.iter()
            .zip(&q)
            .map(|(p, q)| if p + q > 0.0 { (p - q) * (p - q) / (p + q) } else { 0.0 })
            .sum::<f64>())
}

/// Regions used by [`evaluate_views`].
#[derive(Clone, Debug)]
pub struct EvalRois {
    /// Background region for SNR and the bright side of CNR.
    pub bright: Roi,
    /// Inclusion region for the dark side of CNR.
    pub dark: Roi,
    /// Region for MII and histograms.
    pub field: Roi,
}

/// Default regions around a centered inclusion of `radius_mm`: dark disk
/// eroded by 1 mm, bright annulus from `radius + 2` to `radius + 6` mm, and
/// a field disk inscribed in the raster with a `margin_mm` border.
pub fn inclusion_rois(geometry: &RasterGeometry, radius_mm: f64, margin_mm: f64) -> Result<EvalRois> {
    let c = geometry.center_xz();
    let field_r = 0.5 * geometry.width_mm().min(geometry.depth_mm()) - margin_mm;
    Ok(EvalRois {
        dark: Roi::disk_mm("dark", geometry, c, radius_mm - 1.0)?,
        bright: Roi::annulus_mm("bright", geometry, c, radius_mm + 2.0, radius_mm + 6.0)?,
        field: Roi::disk_mm("field", geometry, c, field_r)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub angle_deg: f64,
    pub snr_err: f64,
    pub mii_err: f64,
    pub cnr_err: f64,
    pub chi2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    fn fold(&self, init: f64, f: impl Fn(f64, f64) -> f64, finish: impl Fn(f64) -> f64) -> MetricRow {
        let col = |g: fn(&MetricRow) -> f64| finish(self.rows.iter().map(g).fold(init, &f));
        MetricRow {
            angle_deg: f64::NAN,
            snr_err: col(|r| r.snr_err),
            mii_err: col(|r| r.mii_err),
            cnr_err: col(|r| r.cnr_err),
            chi2: col(|r| r.chi2),
        }
    }

    /// Column means (the angle field is NaN).
    pub fn mean(&self) -> MetricRow {
        let n = self.rows.len() as f64;
        self.fold(0.0, |a, b| a + b, |s| s / n)
    }

    /// Column maxima (the angle field is NaN).
    pub fn max(&self) -> MetricRow {
        self.fold(f64::NEG_INFINITY, f64::max, |m| m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("angle_deg,snr_err,mii_err,cnr_err,chi2\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.angle_deg, r.snr_err, r.mii_err, r.cnr_err, r.chi2
            ));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let agg = |r: MetricRow| {
            serde_json::json!({
                "snr_err": r.snr_err,
                "mii_err": r.mii_err,
                "cnr_err": r.cnr_err,
                "chi2": r.chi2,
            })
        };
        serde_json::json!({
            "rows": self.rows,
            "mean": agg(self.mean()),
            "max": agg(self.max()),
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let json = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::format(stem, e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }

    /// Parses the CSV written by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("angle_deg,snr_err,mii_err,cnr_err,chi2") {
            return Err(Error::format("header", "expected angle_deg,snr_err,mii_err,cnr_err,chi2"));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(format!("row {}", n + 1), e.to_string()))?;
            if v.len() != 5 {
                return Err(Error::format(format!("row {}", n + 1), "expected 5 columns"));
            }
            rows.push(MetricRow {
                angle_deg: v[0],
                snr_err: v[1],
                mii_err: v[2],
                cnr_err: v[3],
                chi2: v[4],
            });
        }
        Ok(MetricReport { rows })
    }
}

/// Metrics of one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub snr: f64,
    pub mii: f64,
    pub cnr: f64,
}

pub fn image_metrics(image: &[f64], rois: &EvalRois) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        snr: snr(image, &rois.bright)?,
        mii: mii(image, &rois.field)?,
        cnr: cnr(image, &rois.bright, &rois.dark)?,
    })
}

/// Compares each reference view with its resimulated counterpart.
pub fn evaluate_views(
    reference: &[BModeImage],
    reconstructed: &[BModeImage],
    angles_deg: &[f64],
    rois: &EvalRois,
) -> Result<MetricReport> {
    if reference.len() != reconstructed.len() || reference.len() != angles_deg.len() {
        return Err(Error::param(
            "views",
            format!(
                "{} reference, {} reconstructed and {} angles",
                reference.len(),
                reconstructed.len(),
                angles_deg.len()
            ),
        ));
    }
    let mut rows = Vec::with_capacity(reference.len());
    for ((a, b), &angle) in reference.iter().zip(reconstructed).zip(angles_deg) {
        if a.geometry() != b.geometry() {
            return Err(Error::param("views", format!("raster mismatch at {angle} deg")));
        }
        let ma = image_metrics(a.values(), rois)?;
        let mb = image_metrics(b.values(), rois)?;
        let chi2 = chi2_hist(
            &rois.field.values(a.values())?,
            &rois.field.values(b.values())?,
            DEFAULT_BINS,
        )?;
        rows.push(MetricRow {
            angle_deg: angle,
            snr_err: normalized_error(mb.snr, ma.snr)?,
            mii_err: normalized_error(mb.mii, ma.mii)?,
            cnr_err: normalized_error(mb.cnr, ma.cnr)?,
            chi2,
        });
    }
    Ok(MetricReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi_all(n: usize) -> Roi {
        Roi::from_indices("all", (0..n).collect(), n).unwrap()
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr(&[1.0, 3.0], &roi_all(2)).unwrap(), 2.0);
        let img = [0.2, 0.5, 0.9, 0.4];
        let scaled: Vec<f64> = img.iter().map(|v| 3.5 * v).collect();
        let (a, b) = (snr(&img, &roi_all(4)).unwrap(), snr(&scaled, &roi_all(4)).unwrap());
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(snr(&[0.3; 4], &roi_all(4)), Err(Error::UndefinedMetric(_))));
        assert!(snr(&[0.4; 3], &roi_all(3)).is_err());
    }

    #[test]
    fn mii_examples() {
        assert!((mii(&[0.2, 0.4], &roi_all(2)).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(mii(&[0.0; 3], &roi_all(3)).unwrap(), 0.0);
        let img = [0.1, 0.7, 0.25, 0.6, 0.05];
        let direct = img.iter().sum::<f64>() / 5.0;
        assert_eq!(mii(&img, &roi_all(5)).unwrap(), direct);
    }

    #[test]
    fn cnr_examples() {
        let img = [3.0, 5.0, 1.0, 3.0];
        let bright = Roi::from_indices("b", vec![0, 1], 4).unwrap();
        let dark = Roi::from_indices("d", vec![2, 3], 4).unwrap();
        assert_eq!(cnr(&img, &bright, &dark).unwrap(), 1.0);
        assert_eq!(cnr(&img, &dark, &bright).unwrap(), 1.0);
        assert_eq!(cnr(&img, &bright, &bright).unwrap(), 0.0);
        assert!(cnr(&[1.0; 4], &bright, &dark).is_err());
    }

    #[test]
    fn normalized_error_examples() {
        assert!((normalized_error(110.0, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(normalized_error(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(normalized_error(50.0, 100.0).unwrap(), 50.0);
        assert!(normalized_error(1.0, 0.0).is_err());
    }

    #[test]
    fn chi2_examples() {
        let a = [0.1, 0.5, 0.5, 0.9];
        let b = [0.3, 0.3, 0.7, 0.95];
        assert_eq!(chi2_hist(&a, &a, 50).unwrap(), 0.0);
        assert_eq!(chi2_hist(&[0.0, 0.01], &[0.99, 1.0], 50).unwrap(), 1.0);
        assert_eq!(chi2_hist(&a, &b, 50).unwrap(), chi2_hist(&b, &a, 50).unwrap());
        // Hand oracle with 2 bins: p = (1/2, 1/2), q = (1/4, 3/4).
        let c = chi2_hist(&[0.1, 0.9], &[0.2, 0.6, 0.7, 0.8], 2).unwrap();
        let expect = 0.5 * ((0.25f64).powi(2) / 0.75 + (0.25f64).powi(2) / 1.25);
        assert!((c - expect).abs() < 1e-15);
    }

    #[test]
    fn roi_construction() {
        let g = RasterGeometry {
            scanlines: 4,
            samples_per_line: 3,
            pitch_mm: 1.0,
            fs_hz: 770e3,
        };
        let r = Roi::rect("r", &g, 1..3, 0..2).unwrap();
        assert_eq!(r.indices(), &[3, 4, 6, 7]);
        assert!(Roi::rect("r", &g, 0..5, 0..1).is_err());
        assert!(Roi::rect("r", &g, 1..1, 0..1).is_err());
        assert!(Roi::from_indices("x", vec![12], 12).is_err());
        // dz = 1 mm, lines at x = -1.5, -0.5, 0.5, 1.5.
        let d = Roi::disk_mm("d", &g, (0.5, 1.0), 1.0).unwrap();
        assert_eq!(d.indices(), &[4, 6, 7, 8, 10]);
    }

    fn bmode(values: Vec<f64>) -> BModeImage {
        let g = RasterGeometry {
            scanlines: 4,
            samples_per_line: 4,
            pitch_mm: 1.0,
            fs_hz: 770e3,
        };
        BModeImage::new(g, 60.0, 0.0, 0.0, values).unwrap()
    }

    fn rois16() -> EvalRois {
        EvalRois {
            bright: Roi::from_indices("b", vec![0, 1, 2, 3, 4], 16).unwrap(),
            dark: Roi::from_indices("d", vec![5, 6, 9, 10], 16).unwrap(),
            field: Roi::from_indices("f", (0..16).collect(), 16).unwrap(),
        }
    }

    #[test]
    fn identical_views_give_zero_report() {
        let imgs: Vec<BModeImage> = (0..3)
            .map(|k| {
                bmode(
                    (0..16)
                        .map(|i| {
                            let base = if [5, 6, 9, 10].contains(&i) { 0.0 } else { 0.5 };
                            base + ((i * 7 + k) % 11) as f64 / 20.0
                        })
                        .collect(),
                )
            })
            .collect();
        let rep = evaluate_views(&imgs, &imgs, &[0.0, 1.0, 2.0], &rois16()).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert_eq!((r.snr_err, r.mii_err, r.cnr_err, r.chi2), (0.0, 0.0, 0.0, 0.0));
        }
        assert!(evaluate_views(&imgs, &imgs[..2], &[0.0, 1.0], &rois16()).is_err());
    }

    #[test]
    fn aggregates_and_csv() {
        let a = bmode((0..16).map(|i| (i % 5) as f64 / 4.0).collect());
        let b = bmode((0..16).map(|i| ((i + 2) % 7) as f64 / 6.0).collect());
        let c = bmode((0..16).map(|i| ((i * 3) % 4) as f64 / 3.0).collect());
        let rep = evaluate_views(
            &[a.clone(), a.clone(), a],
            &[b.clone(), c, b],
            &[0.0, 1.0, 2.0],
            &rois16(),
        )
        .unwrap();
        let (mean, max) = (rep.mean(), rep.max());
        assert!(max.snr_err >= mean.snr_err && max.mii_err >= mean.mii_err);
        assert!(max.cnr_err >= mean.cnr_err && max.chi2 >= mean.chi2);
        for r in &rep.rows {
            assert!(r.snr_err >= 0.0 && r.mii_err >= 0.0 && r.cnr_err >= 0.0);
            assert!((0.0..=1.0).contains(&r.chi2));
        }
        let back = MetricReport::from_csv(&rep.to_csv()).unwrap();
        assert_eq!(back, rep);
        let json = rep.to_json();
        assert_eq!(json["rows"].as_array().unwrap().len(), 3);
        assert!(json["mean"]["mii_err"].is_number());
    }
}
