//! Polar bird's-eye-view sensing grid, occupancy masks, and coordinate
//! conversions.
//!
//! The grid spans an azimuth extent (degrees from the forward axis, so 0° is
//! straight ahead) by a radial extent starting at 0 m. A cell value of 1 means
//! "reflector present". Cartesian convention: `px = r·sin(φ)`,
//! `py = r·cos(φ)`, so a forward-facing grid has `py ≥ 0`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Polar azimuth × range grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub n_az: usize,
    pub n_rng: usize,
    pub az_min_deg: f64,
    pub az_max_deg: f64,
    pub rng_max_m: f64,
}

/// Validated grid constructor. Bin centers sit at the middle of each bin:
/// `az(i) = az_min + (i + 0.5)·Δaz`, `rng(j) = (j + 0.5)·Δr`.
pub fn make_grid(
    n_az: usize,
    n_rng: usize,
    az_min_deg: f64,
    az_max_deg: f64,
    rng_max_m: f64,
) -> Result<PolarGrid> {
    if n_az < 2 {
        return Err(Error::config("n_az", format!("must be >= 2, got {n_az}")));
    }
    if n_rng < 2 {
        return Err(Error::config("n_rng", format!("must be >= 2, got {n_rng}")));
    }
    if !(az_min_deg < az_max_deg) {
        return Err(Error::config(
            "az_min_deg",
            format!("azimuth extent inverted or empty: [{az_min_deg}, {az_max_deg}]"),
        ));
    }
    if !(rng_max_m > 0.0) {
        return Err(Error::config(
            "rng_max_m",
            format!("must be > 0, got {rng_max_m}"),
        ));
    }
    Ok(PolarGrid {
        n_az,
        n_rng,
        az_min_deg,
        az_max_deg,
        rng_max_m,
    })
}

impl PolarGrid {
    /// Desk-scale default: 64 × 96 over [−90°, 90°] × [0, 103] m.
    pub fn default_desk() -> PolarGrid {
        make_grid(64, 96, -90.0, 90.0, 103.0).expect("default grid is valid")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_az, self.n_rng)
    }

    pub fn az_bin_width_deg(&self) -> f64 {
        (self.az_max_deg - self.az_min_deg) / self.n_az as f64
    }

    pub fn rng_bin_width_m(&self) -> f64 {
        self.rng_max_m / self.n_rng as f64
    }

    /// Azimuth bin center in degrees from the forward axis.
    pub fn az_center_deg(&self, i: usize) -> f64 {
        self.az_min_deg + (i as f64 + 0.5) * self.az_bin_width_deg()
    }

    /// Range bin center in meters.
    pub fn rng_center_m(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.rng_bin_width_m()
    }

    /// Cartesian coordinates of a cell center.
    pub fn cell_center_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let phi = self.az_center_deg(i).to_radians();
        let r = self.rng_center_m(j);
        (r * phi.sin(), r * phi.cos())
    }

    /// Bin indices containing the Cartesian point, or `None` when it falls
    /// outside the grid extent.
    pub fn bin_index(&self, px: f64, py: f64) -> Option<(usize, usize)> {
        let r = px.hypot(py);
        let phi_deg = px.atan2(py).to_degrees();
        if !phi_deg.is_finite() || !r.is_finite() {
            return None;
        }
        let fi = (phi_deg - self.az_min_deg) / self.az_bin_width_deg();
        let fj = r / self.rng_bin_width_m();
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi.floor() as usize, fj.floor() as usize);
        if i >= self.n_az || j >= self.n_rng {
            return None;
        }
        Some((i, j))
    }
}

/// Occupancy values over a [`PolarGrid`], each entry in [0, 1]. Ground-truth
/// scenes are binary {0, 1}; solver outputs may be fractional.
#[derive(Debug, Clone)]
pub struct SceneMask {
    pub grid: PolarGrid,
    /// Shape (n_az, n_rng), azimuth-major.
    pub values: Array2<f64>,
}

impl SceneMask {
    pub fn zeros(grid: PolarGrid) -> SceneMask {
        let values = Array2::zeros((grid.n_az, grid.n_rng));
        SceneMask { grid, values }
    }

    /// Wraps raw values, rejecting anything outside [0, 1] or non-finite.
    pub fn from_values(grid: PolarGrid, values: Array2<f64>) -> Result<SceneMask> {
        if values.dim() != grid.dims() {
            return Err(Error::GridMismatch {
                expected: grid.dims(),
                got: values.dim(),
                context: "SceneMask::from_values",
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Invalid(format!(
                "mask value {bad} outside [0, 1]"
            )));
        }
        Ok(SceneMask { grid, values })
    }

    /// Fraction of cells with value > 0.5.
    pub fn occupied_fraction(&self) -> f64 {
        let n = self.values.len();
        let hits = self.values.iter().filter(|v| **v > 0.5).count();
        hits as f64 / n as f64
    }
}

/// Cartesian points in meters, `(px, py)` with `px = r·sin φ`, `py = r·cos φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<(f64, f64)>,
}

impl PointSet {
    pub fn new(points: Vec<(f64, f64)>) -> PointSet {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One point per cell with value strictly above `threshold`, at the cell
/// center. Output order is azimuth-major (azimuth outer, range inner).
pub fn mask_to_points(mask: &SceneMask, threshold: f64) -> PointSet {
    let mut points = Vec::new();
    for i in 0..mask.grid.n_az {
        for j in 0..mask.grid.n_rng {
            if mask.values[[i, j]] > threshold {
                points.push(mask.grid.cell_center_xy(i, j));
            }
        }
    }
    PointSet { points }
}

/// Projects points into the grid, setting each containing cell to 1. Points
/// outside the extent are dropped; the drop count is returned alongside.
pub fn points_to_mask(points: &PointSet, grid: &PolarGrid) -> (SceneMask, usize) {
    let mut mask = SceneMask::zeros(grid.clone());
    let mut dropped = 0usize;
    for &(px, py) in &points.points {
        match grid.bin_index(px, py) {
            Some((i, j)) => mask.values[[i, j]] = 1.0,
            None => dropped += 1,
        }
    }
    (mask, dropped)
}

/// Block-average over `factor`×`factor` cell blocks. Grid dimensions shrink by
/// `factor`; physical extents are unchanged.
pub fn downsample_mask(mask: &SceneMask, factor: usize) -> Result<SceneMask> {
    if factor == 0 {
        return Err(Error::Invalid("downsample factor must be >= 1".into()));
    }
    let (n_az, n_rng) = mask.grid.dims();
    if n_az % factor != 0 || n_rng % factor != 0 {
        return Err(Error::Invalid(format!(
            "downsample factor {factor} does not divide grid {n_az}x{n_rng}"
        )));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let grid = PolarGrid {
        n_az: n_az / factor,
        n_rng: n_rng / factor,
        ..mask.grid.clone()
    };
    let inv = 1.0 / (factor * factor) as f64;
    let mut values = Array2::zeros(grid.dims());
    for i in 0..grid.n_az {
        for j in 0..grid.n_rng {
            let mut acc = 0.0;
            for di in 0..factor {
                for dj in 0..factor {
                    acc += mask.values[[i * factor + di, j * factor + dj]];
                }
            }
            values[[i, j]] = acc * inv;
        }
    }
    Ok(SceneMask { grid, values })
}
