//! On-disk formats.
//!
//! - `RINVGRID 1`: real grid data. ASCII magic line, then an ASCII header
//!   line `n_az n_rng az_min az_max rng_max`, then `n_az·n_rng` little-endian
//!   f32 values, azimuth-major.
//! - `RINVCPLX 1`: complex grid data, same header, interleaved re/im f32.
//! - Points CSV: header `px_m,py_m`, one point per line, 9 significant
//!   digits.
//! - PGM (P5): 8-bit grayscale render, header `P5\n<w> <h>\n255\n`.
//!
//! All writers go through a temp-file-then-rename so a crash never leaves a
//! truncated file behind.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::Heatmap;
use crate::grid::{make_grid, PointSet, PolarGrid, SceneMask};

const GRID_MAGIC: &str = "RINVGRID 1";
const CPLX_MAGIC: &str = "RINVCPLX 1";

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn header_bytes(magic: &str, grid: &PolarGrid) -> Vec<u8> {
    format!(
        "{magic}\n{} {} {} {} {}\n",
        grid.n_az, grid.n_rng, grid.az_min_deg, grid.az_max_deg, grid.rng_max_m
    )
    .into_bytes()
}

fn parse_header<'a>(
    lines: &mut std::str::Lines<'a>,
    magic: &str,
    path: &Path,
) -> Result<PolarGrid> {
    let got_magic = lines
        .next()
        .ok_or_else(|| Error::format(Some(path.into()), "missing magic line"))?;
    if got_magic != magic {
        return Err(Error::format(
            Some(path.into()),
            format!("bad magic: expected '{magic}', got '{got_magic}'"),
        ));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::format(Some(path.into()), "missing header line"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::format(
            Some(path.into()),
            format!("header needs 5 fields, got {}", fields.len()),
        ));
    }
    let n_az: usize = fields[0]
        .parse()
        .map_err(|_| Error::format(Some(path.into()), "bad n_az"))?;
    let n_rng: usize = fields[1]
        .parse()
        .map_err(|_| Error::format(Some(path.into()), "bad n_rng"))?;
    let nums: Vec<f64> = fields[2..]
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(Some(path.into()), "bad header number"))?;
    make_grid(n_az, n_rng, nums[0], nums[1], nums[2])
}

/// Splits a file into its two ASCII header lines and the binary payload.
fn split_text_payload<'a>(bytes: &'a [u8], path: &Path) -> Result<(String, &'a [u8])> {
    let mut newlines = 0usize;
    for (pos, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            newlines += 1;
            if newlines == 2 {
                let text = std::str::from_utf8(&bytes[..pos]).map_err(|_| {
                    Error::format(Some(path.into()), "header is not valid UTF-8")
                })?;
                return Ok((text.to_string(), &bytes[pos + 1..]));
            }
        }
    }
    Err(Error::format(Some(path.into()), "truncated header"))
}

pub fn grid_file_bytes(grid: &PolarGrid, values: &Array2<f64>) -> Vec<u8> {
    let mut out = header_bytes(GRID_MAGIC, grid);
    out.reserve(values.len() * 4);
    for v in values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Writes a real-valued grid (mask or magnitude heatmap) as `RINVGRID 1`.
pub fn write_grid_file(path: &Path, grid: &PolarGrid, values: &Array2<f64>) -> Result<()> {
    write_atomic(path, &grid_file_bytes(grid, values))
}

/// Reads an `RINVGRID 1` file.
pub fn read_grid_file(path: &Path) -> Result<(PolarGrid, Array2<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (text, payload) = split_text_payload(&bytes, path)?;
    let mut lines = text.lines();
    let grid = parse_header(&mut lines, GRID_MAGIC, path)?;
    let n = grid.n_az * grid.n_rng;
    if payload.len() != n * 4 {
        return Err(Error::format(
            Some(path.into()),
            format!("payload is {} bytes, expected {}", payload.len(), n * 4),
        ));
    }
    let mut values = Array2::zeros(grid.dims());
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        values[[idx / grid.n_rng, idx % grid.n_rng]] =
            f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((grid, values))
}

pub fn write_scene_mask(path: &Path, mask: &SceneMask) -> Result<()> {
    write_grid_file(path, &mask.grid, &mask.values)
}

pub fn read_scene_mask(path: &Path) -> Result<SceneMask> {
    let (grid, values) = read_grid_file(path)?;
    // Stored masks may carry f32 rounding; clamp the dust back into range.
    let values = values.mapv(|v| v.clamp(0.0, 1.0));
    Ok(SceneMask { grid, values })
}

pub fn write_magnitude_heatmap(path: &Path, hm: &Heatmap) -> Result<()> {
    write_grid_file(path, hm.grid(), hm.magnitude_values()?)
}

pub fn read_magnitude_heatmap(path: &Path) -> Result<Heatmap> {
    let (grid, values) = read_grid_file(path)?;
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::format(
            Some(path.into()),
            format!("magnitude value {bad} is negative or non-finite"),
        ));
    }
    Ok(Heatmap::Magnitude { grid, values })
}

/// Writes a complex heatmap as `RINVCPLX 1` (interleaved re/im f32).
pub fn write_complex_heatmap(path: &Path, hm: &Heatmap) -> Result<()> {
    let values = hm.complex_values()?;
    let mut out = header_bytes(CPLX_MAGIC, hm.grid());
    out.reserve(values.len() * 8);
    for v in values.iter() {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn read_complex_heatmap(path: &Path) -> Result<Heatmap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (text, payload) = split_text_payload(&bytes, path)?;
    let mut lines = text.lines();
    let grid = parse_header(&mut lines, CPLX_MAGIC, path)?;
    let n = grid.n_az * grid.n_rng;
    if payload.len() != n * 8 {
        return Err(Error::format(
            Some(path.into()),
            format!("payload is {} bytes, expected {}", payload.len(), n * 8),
        ));
    }
    let mut values = Array2::zeros(grid.dims());
    for (idx, chunk) in payload.chunks_exact(8).enumerate() {
        let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64;
        let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64;
        values[[idx / grid.n_rng, idx % grid.n_rng]] = Complex64::new(re, im);
    }
    Ok(Heatmap::Complex { grid, values })
}

/// Points CSV with 9 significant digits per coordinate.
pub fn points_csv_bytes(points: &PointSet) -> Vec<u8> {
    let mut out = String::from("px_m,py_m\n");
    for (px, py) in &points.points {
        out.push_str(&format!("{px:.8e},{py:.8e}\n"));
    }
    out.into_bytes()
}

pub fn write_points_csv(path: &Path, points: &PointSet) -> Result<()> {
    write_atomic(path, &points_csv_bytes(points))
}

pub fn read_points_csv(path: &Path) -> Result<PointSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("px_m,py_m") => {}
        other => {
            return Err(Error::format(
                Some(path.into()),
                format!("bad points CSV header: {other:?}"),
            ))
        }
    }
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| {
                Error::format(
                    Some(path.into()),
                    format!("bad point on line {}", lineno + 2),
                )
            })
        };
        let px = parse(it.next())?;
        let py = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::format(
                Some(path.into()),
                format!("too many fields on line {}", lineno + 2),
            ));
        }
        points.push((px, py));
    }
    Ok(PointSet::new(points))
}

/// Grayscale mapping for grid renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Linear: 0 → 0, max → 255.
    Gray,
    /// Compressive: log10(1 + 100·v/max), rescaled to [0, 255].
    Log,
}

pub fn pgm_bytes(values: &Array2<f64>, mode: RenderMode) -> Vec<u8> {
    let (h, w) = values.dim();
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let log_full = (101.0f64).log10();
    for v in values.iter() {
        let px = if max <= 0.0 {
            0u8
        } else {
            let t = (v / max).clamp(0.0, 1.0);
            let mapped = match mode {
                RenderMode::Gray => t,
                RenderMode::Log => (1.0 + 100.0 * t).log10() / log_full,
            };
            (mapped * 255.0).round() as u8
        };
        out.push(px);
    }
    out
}

pub fn write_pgm(path: &Path, values: &Array2<f64>, mode: RenderMode) -> Result<()> {
    write_atomic(path, &pgm_bytes(values, mode))
}

/// Reads a P5 PGM back into (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take_line = || -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::format(Some(path.into()), "truncated PGM header"));
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok(line)
    };
    if take_line()? != "P5" {
        return Err(Error::format(Some(path.into()), "not a P5 PGM"));
    }
    let dims = take_line()?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(Some(path.into()), "bad PGM width"))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(Some(path.into()), "bad PGM height"))?;
    if take_line()? != "255" {
        return Err(Error::format(Some(path.into()), "unsupported PGM maxval"));
    }
    let pixels = bytes[pos..].to_vec();
    if pixels.len() != w * h {
        return Err(Error::format(
            Some(path.into()),
            format!("PGM payload is {} bytes, expected {}", pixels.len(), w * h),
        ));
    }
    Ok((w, h, pixels))
}
