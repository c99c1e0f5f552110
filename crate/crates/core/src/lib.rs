//! Unsupervised radar point enhancement on a polar bird's-eye-view grid.
//!
//! The crate models angle estimation as an inverse problem: a differentiable
//! matched-filter imaging operator maps occupancy masks to range–azimuth
//! heatmaps, a diffusion model trained on synthetic LiDAR-like scenes supplies
//! the prior, and a measurement-guided posterior sampler recovers enhanced
//! masks from degraded heatmaps. Classical baselines (L1/L2-regularized
//! descent, CA-CFAR) and point-set metrics (CD/UCD/MHD/UMHD) round out the
//! toolkit.
//!
//! ```text
//! scene mask ──A(·)──► heatmap ──solver──► enhanced mask ──► points ──► metrics
//!                 ▲                  ▲
//!        steering + matched    diffusion prior
//!        filter per range      (noise schedule + denoiser + codec)
//! ```

pub mod codec;
pub mod diffusion;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod schedule;
pub mod solvers;

pub use error::{Error, Result};
