//! Synthetic LiDAR-like scene generation.
//!
//! Scenes are binary occupancy masks built from Cartesian wall segments,
//! single-cell point targets, and sparse clutter. Generation is a pure
//! function of `(spec, grid)`: the same seed always yields bit-identical
//! masks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{PolarGrid, SceneMask};

/// Parameters of one synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_walls: usize,
    pub n_point_targets: usize,
    /// Min/max wall segment length in meters.
    pub wall_length_range_m: (f64, f64),
    /// Fraction of cells set by random clutter, in [0, 1).
    pub clutter_density: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.wall_length_range_m;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::config(
                "wall_length_range_m",
                format!("range must be ordered and nonnegative, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..1.0).contains(&self.clutter_density) {
            return Err(Error::config(
                "clutter_density",
                format!("must be in [0, 1), got {}", self.clutter_density),
            ));
        }
        Ok(())
    }

    /// Defaults used by the CLI: two walls, three point targets, a trace of
    /// clutter.
    pub fn default_with_seed(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            n_walls: 2,
            n_point_targets: 3,
            wall_length_range_m: (5.0, 20.0),
            clutter_density: 0.001,
        }
    }
}

/// Cells whose centers lie within half a cell diagonal of the segment
/// `(x0, y0)-(x1, y1)`. The diagonal is the local Cartesian cell diagonal
/// (range width × arc width at that radius), so coverage tracks cell size.
pub fn rasterize_wall(
    grid: &PolarGrid,
    p0: (f64, f64),
    p1: (f64, f64),
) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let dr = grid.rng_bin_width_m();
    let dphi = grid.az_bin_width_deg().to_radians();
    for i in 0..grid.n_az {
        for j in 0..grid.n_rng {
            let c = grid.cell_center_xy(i, j);
            let r = grid.rng_center_m(j);
            let half_diag = 0.5 * (dr * dr + (r * dphi) * (r * dphi)).sqrt();
            if point_segment_distance(c, p0, p1) <= half_diag {
                cells.push((i, j));
            }
        }
    }
    cells
}

/// Euclidean distance from point `p` to segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((px * vx + py * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (px - t * vx, py - t * vy);
    dx.hypot(dy)
}

/// Deterministic scene synthesis: walls, then point targets, then clutter.
pub fn generate_scene(spec: &SceneSpec, grid: &PolarGrid) -> Result<SceneMask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = SceneMask::zeros(grid.clone());

    for _ in 0..spec.n_walls {
        let phi = rng
            .random_range(grid.az_min_deg..grid.az_max_deg)
            .to_radians();
        let r = rng.random_range(0.15..0.85) * grid.rng_max_m;
        let center = (r * phi.sin(), r * phi.cos());
        let orient = rng.random_range(0.0..std::f64::consts::PI);
        let (lo, hi) = spec.wall_length_range_m;
        let len = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let half = (0.5 * len * orient.cos(), 0.5 * len * orient.sin());
        let p0 = (center.0 - half.0, center.1 - half.1);
        let p1 = (center.0 + half.0, center.1 + half.1);
        for (i, j) in rasterize_wall(grid, p0, p1) {
            mask.values[[i, j]] = 1.0;
        }
    }

    for _ in 0..spec.n_point_targets {
        let i = rng.random_range(0..grid.n_az);
        let j = rng.random_range(0..grid.n_rng);
        mask.values[[i, j]] = 1.0;
    }

    let n_cells = grid.n_az * grid.n_rng;
    let n_clutter = (spec.clutter_density * n_cells as f64).round() as usize;
    if n_clutter > 0 {
        let mut indices: Vec<usize> = (0..n_cells).collect();
        indices.shuffle(&mut rng);
        for &idx in indices.iter().take(n_clutter) {
            mask.values[[idx / grid.n_rng, idx % grid.n_rng]] = 1.0;
        }
    }

    Ok(mask)
}
