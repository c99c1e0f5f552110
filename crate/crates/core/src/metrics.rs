//! Point-set similarity metrics: CD, UCD, MHD, UMHD.
//!
//! All four derive from the directed mean nearest-neighbor distance
//! `d(A → B) = (1/|A|)·Σ_a min_b ‖a − b‖`:
//! CD = d(pred→gt) + d(gt→pred), UCD = d(pred→gt), MHD = max of the two
//! directed means, UMHD = d(gt→pred). Distances are Euclidean meters,
//! unsquared. Empty sets are a hard error, never a silent score.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::PointSet;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cd: f64,
    pub ucd: f64,
    pub mhd: f64,
    pub umhd: f64,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// `(1/|A|)·Σ_{a∈A} min_{b∈B} ‖a − b‖₂`.
pub fn directed_mean_nn(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyPointSet("query"));
    }
    if b.is_empty() {
        return Err(Error::EmptyPointSet("reference"));
    }
    let total: f64 = a
        .points
        .par_iter()
        .map(|&(ax, ay)| {
            b.points
                .iter()
                .map(|&(bx, by)| (ax - bx).hypot(ay - by))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / a.len() as f64)
}

pub fn compute_metrics(pred: &PointSet, gt: &PointSet) -> Result<MetricsReport> {
    if pred.is_empty() {
        return Err(Error::EmptyPointSet("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyPointSet("ground-truth"));
    }
    let d_pg = directed_mean_nn(pred, gt)?;
    let d_gp = directed_mean_nn(gt, pred)?;
    Ok(MetricsReport {
        cd: d_pg + d_gp,
        ucd: d_pg,
        mhd: d_pg.max(d_gp),
        umhd: d_gp,
        n_pred: pred.len(),
        n_gt: gt.len(),
    })
}
