//! On-disk formats.
//!
//! * `.sgrid` - one ASCII header line
//!   `SGRID v1 <rows> <cols> <dz_mm> <dx_mm> <origin_x_mm> <origin_z_mm>`
//!   (optionally followed by ` # comment`) and a newline, then
//!   `rows * cols` little-endian `f32` values in row-major order.
//! * `.scat` - UTF-8 CSV with header `x_mm,y_mm,z_mm,amp`, one scatterer
//!   per row, at most 9 significant digits per value.
//! * `.pgm` - binary 8-bit graymap (`P5`, maxval 255), pixel = `round(255 v)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BModeImage, Bounds, Scatterer, ScatterGrid, ScattererCloud};

const SGRID_MAGIC: &str = "SGRID";
const SGRID_VERSION: &str = "v1";
const SCAT_HEADER: &str = "x_mm,y_mm,z_mm,amp";

pub fn save_grid(grid: &ScatterGrid, path: impl AsRef<Path>) -> Result<()> {
    save_grid_with_comment(grid, path, None)
}

/// Writes a grid; `comment` (no newlines) is appended to the header after `#`.
pub fn save_grid_with_comment(
    grid: &ScatterGrid,
    path: impl AsRef<Path>,
    comment: Option<&str>,
) -> Result<()> {
    let bytes = encode_grid(grid, comment)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_grid(grid: &ScatterGrid, comment: Option<&str>) -> Result<Vec<u8>> {
    let mut header = format!(
        "{SGRID_MAGIC} {SGRID_VERSION} {} {} {} {} {} {}",
        grid.rows(),
        grid.cols(),
        grid.dz_mm(),
        grid.dx_mm(),
        grid.origin_x_mm(),
        grid.origin_z_mm()
    );
    if let Some(c) = comment {
        if c.contains('\n') {
            return Err(Error::param("comment", "must be a single line"));
        }
        header.push_str(" # ");
        header.push_str(c);
    }
    header.push('\n');
    let mut out = Vec::with_capacity(header.len() + 4 * grid.values().len());
    out.extend_from_slice(header.as_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<ScatterGrid> {
    let bytes = fs::read(path)?;
    decode_grid(&bytes)
}

pub fn decode_grid(bytes: &[u8]) -> Result<ScatterGrid> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("header", "missing newline-terminated header"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format("header", "not ASCII"))?;
    let header = header.split('#').next().unwrap_or("");
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.first() != Some(&SGRID_MAGIC) {
        return Err(Error::format("magic", "expected SGRID"));
    }
    if tokens.get(1) != Some(&SGRID_VERSION) {
        return Err(Error::format("version", "expected v1"));
    }
    if tokens.len() != 8 {
        return Err(Error::format(
            "header",
            format!("expected 8 tokens, found {}", tokens.len()),
        ));
    }
    let rows: usize = parse_token(tokens[2], "rows")?;
    let cols: usize = parse_token(tokens[3], "cols")?;
    let dz: f64 = parse_token(tokens[4], "dz_mm")?;
    let dx: f64 = parse_token(tokens[5], "dx_mm")?;
    let ox: f64 = parse_token(tokens[6], "origin_x_mm")?;
    let oz: f64 = parse_token(tokens[7], "origin_z_mm")?;
    if rows == 0 {
        return Err(Error::format("rows", "must be positive"));
    }
    if cols == 0 {
        return Err(Error::format("cols", "must be positive"));
    }
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::format("dz_mm", format!("{dz} is not positive")));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::format("dx_mm", format!("{dx} is not positive")));
    }
    if !ox.is_finite() {
        return Err(Error::format("origin_x_mm", "not finite"));
    }
    if !oz.is_finite() {
        return Err(Error::format("origin_z_mm", "not finite"));
    }
    let payload = &bytes[nl + 1..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("rows", "rows*cols overflows"))?;
    if payload.len() != expected {
        return Err(Error::format(
            "payload",
            format!(
                "length mismatch: header declares {rows}x{cols} ({expected} bytes), found {} bytes",
                payload.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::format(
                format!("values[{i}]"),
                format!("range error: {v} outside [0, 1]"),
            ));
        }
        values.push(v);
    }
    ScatterGrid::new(rows, cols, dz, dx, ox, oz, values)
        .map_err(|e| Error::format("grid", e.to_string()))
}

fn parse_token<T: std::str::FromStr>(tok: &str, field: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(field, format!("cannot parse `{tok}`")))
}

pub fn save_cloud(cloud: &ScattererCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SCAT_HEADER}")?;
    for p in cloud.points() {
        writeln!(
            w,
            "{},{},{},{}",
            sig9(p.x_mm),
            sig9(p.y_mm),
            sig9(p.z_mm),
            sig9(p.amp)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a `.scat` file. The domain is the bounding box of the points
/// (a degenerate box at the origin for an empty file).
pub fn load_cloud(path: impl AsRef<Path>) -> Result<ScattererCloud> {
    let text = fs::read_to_string(path)?;
    decode_cloud(&text)
}

pub fn decode_cloud(text: &str) -> Result<ScattererCloud> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SCAT_HEADER => {}
        _ => return Err(Error::format("header", format!("expected `{SCAT_HEADER}`"))),
    }
    let names = ["x_mm", "y_mm", "z_mm", "amp"];
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                format!("row {}", row + 1),
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0f64; 4];
        for k in 0..4 {
            v[k] = fields[k].trim().parse().map_err(|_| {
                Error::format(
                    format!("{} (row {})", names[k], row + 1),
                    format!("cannot parse `{}`", fields[k]),
                )
            })?;
            if !v[k].is_finite() {
                return Err(Error::format(
                    format!("{} (row {})", names[k], row + 1),
                    "not finite",
                ));
            }
        }
        if !(0.0..=1.0).contains(&v[3]) {
            return Err(Error::format(
                format!("amp (row {})", row + 1),
                format!("range error: {} outside [0, 1]", v[3]),
            ));
        }
        points.push(Scatterer {
            x_mm: v[0],
            y_mm: v[1],
            z_mm: v[2],
            amp: v[3],
        });
    }
    let domain = bounding_box(&points);
    ScattererCloud::new(points, domain).map_err(|e| Error::format("cloud", e.to_string()))
}

fn bounding_box(points: &[Scatterer]) -> Bounds {
    if points.is_empty() {
        return Bounds {
            x_min: 0.0,
            x_max: 0.0,
            y_min: 0.0,
            y_max: 0.0,
            z_min: 0.0,
            z_max: 0.0,
        };
    }
    let mut b = Bounds {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
        z_min: f64::INFINITY,
        z_max: f64::NEG_INFINITY,
    };
    for p in points {
        b.x_min = b.x_min.min(p.x_mm);
        b.x_max = b.x_max.max(p.x_mm);
        b.y_min = b.y_min.min(p.y_mm);
        b.y_max = b.y_max.max(p.y_mm);
        b.z_min = b.z_min.min(p.z_mm);
        b.z_max = b.z_max.max(p.z_mm);
    }
    b
}

/// Plain decimal with at most 9 significant digits, trailing zeros trimmed.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Writes a `P5` graymap of `width x height` pixels, sampling `pixel(row, col)`
/// in `[0, 1]`.
pub fn write_pgm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    pixel: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    for r in 0..height {
        for c in 0..width {
            let v = pixel(r, c).clamp(0.0, 1.0);
            out.push((255.0 * v).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// B-mode export: image rows are depth samples, columns are scanlines.
pub fn save_bmode_pgm(image: &BModeImage, path: impl AsRef<Path>) -> Result<()> {
    let spl = image.samples_per_line();
    let v = image.values();
    write_pgm(path, image.scanlines(), spl, |r, c| v[c * spl + r])
}

pub fn save_grid_pgm(grid: &ScatterGrid, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path, grid.cols(), grid.rows(), |r, c| grid.get(r, c) as f64)
}
