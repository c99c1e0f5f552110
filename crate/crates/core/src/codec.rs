//! Fixed analytic encoder/decoder pair between mask space and latent space.
//!
//! Both variants are linear with exact adjoints, so measurement gradients can
//! be chained through the decoder analytically.
//!
//! - `Identity`: latent = mask.
//! - `Pool2`: encoder is a 2×2 block average; decoder is a mean-preserving
//!   bilinear 2× upsample (each coarse cell expands to four fine cells offset
//!   by ± a quarter of the local slope), so `E(D(z)) = z` holds and `D∘E` is
//!   idempotent.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Identity,
    Pool2,
}

impl Codec {
    /// Latent dimensions for a mask of the given shape.
    pub fn latent_dims(&self, mask_dims: (usize, usize)) -> Result<(usize, usize)> {
        match self {
            Codec::Identity => Ok(mask_dims),
            Codec::Pool2 => {
                if mask_dims.0 % 2 != 0 || mask_dims.1 % 2 != 0 {
                    return Err(Error::Invalid(format!(
                        "pool2 codec needs even grid dims, got {}x{}",
                        mask_dims.0, mask_dims.1
                    )));
                }
                Ok((mask_dims.0 / 2, mask_dims.1 / 2))
            }
        }
    }

    /// E: mask-shaped tensor → latent.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Codec::Identity => Ok(x.clone()),
            Codec::Pool2 => {
                let (lh, lw) = self.latent_dims(x.dim())?;
                let mut z = Array2::zeros((lh, lw));
                for i in 0..lh {
                    for j in 0..lw {
                        z[[i, j]] = 0.25
                            * (x[[2 * i, 2 * j]]
                                + x[[2 * i, 2 * j + 1]]
                                + x[[2 * i + 1, 2 * j]]
                                + x[[2 * i + 1, 2 * j + 1]]);
                    }
                }
                Ok(z)
            }
        }
    }

    /// D: latent → mask-shaped tensor.
    pub fn decode(&self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Codec::Identity => z.clone(),
            Codec::Pool2 => {
                let (lh, lw) = z.dim();
                let mut x = Array2::zeros((2 * lh, 2 * lw));
                for i in 0..lh {
                    for j in 0..lw {
                        let (gx, gy) = slopes(z, i, j);
                        for a in 0..2usize {
                            for b in 0..2usize {
                                let sa = if a == 0 { -0.25 } else { 0.25 };
                                let sb = if b == 0 { -0.25 } else { 0.25 };
                                x[[2 * i + a, 2 * j + b]] = z[[i, j]] + sa * gx + sb * gy;
                            }
                        }
                    }
                }
                x
            }
        }
    }

    /// Eᵀ: latent cotangent → mask-shaped cotangent.
    pub fn encode_adjoint(&self, u: &Array2<f64>) -> Array2<f64> {
        match self {
            Codec::Identity => u.clone(),
            Codec::Pool2 => {
                let (lh, lw) = u.dim();
                let mut x = Array2::zeros((2 * lh, 2 * lw));
                for i in 0..lh {
                    for j in 0..lw {
                        let v = 0.25 * u[[i, j]];
                        x[[2 * i, 2 * j]] = v;
                        x[[2 * i, 2 * j + 1]] = v;
                        x[[2 * i + 1, 2 * j]] = v;
                        x[[2 * i + 1, 2 * j + 1]] = v;
                    }
                }
                x
            }
        }
    }

    /// Dᵀ: mask-shaped cotangent → latent cotangent.
    pub fn decode_adjoint(&self, u: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Codec::Identity => Ok(u.clone()),
            Codec::Pool2 => {
                let (lh, lw) = self.latent_dims(u.dim())?;
                let mut z = Array2::zeros((lh, lw));
                for i in 0..lh {
                    for j in 0..lw {
                        for a in 0..2usize {
                            for b in 0..2usize {
                                let w = u[[2 * i + a, 2 * j + b]];
                                let sa = if a == 0 { -0.25 } else { 0.25 };
                                let sb = if b == 0 { -0.25 } else { 0.25 };
                                // Direct term.
                                z[[i, j]] += w;
                                // Slope terms scatter onto the neighbors used
                                // by `slopes`.
                                let (ilo, ihi, dxw) = slope_support(lh, i);
                                z[[ihi, j]] += sa * dxw * w;
                                z[[ilo, j]] -= sa * dxw * w;
                                let (jlo, jhi, dyw) = slope_support(lw, j);
                                z[[i, jhi]] += sb * dyw * w;
                                z[[i, jlo]] -= sb * dyw * w;
                            }
                        }
                    }
                }
                Ok(z)
            }
        }
    }
}

/// Central-difference slopes with clamped borders, per coarse unit.
fn slopes(z: &Array2<f64>, i: usize, j: usize) -> (f64, f64) {
    let (lh, lw) = z.dim();
    let (ilo, ihi, wx) = slope_support(lh, i);
    let (jlo, jhi, wy) = slope_support(lw, j);
    (
        (z[[ihi, j]] - z[[ilo, j]]) * wx,
        (z[[i, jhi]] - z[[i, jlo]]) * wy,
    )
}

/// Index pair and weight realizing a clamped central difference along one
/// axis of length `n` at position `i`.
fn slope_support(n: usize, i: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(n - 1);
    (lo, hi, 1.0 / (hi - lo) as f64)
}
