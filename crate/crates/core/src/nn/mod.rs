//! Noise-prediction networks with hand-rolled backpropagation.
//!
//! Two architectures implement [`NoisePredictor`]:
//!
//! - [`DenseDenoiser`]: two hidden layers of width 1024 on the flattened
//!   latent concatenated with the time embedding. The workhorse for
//!   desk-scale grids.
//! - [`ConvDenoiser`]: a time-conditioned convolutional encoder–decoder with
//!   three resolution levels (widths 32/64/128), additive skip connections,
//!   and SiLU activations.
//!
//! Checkpoints use the `RINVDNZ 1` container: magic line, an ASCII
//! architecture descriptor, then named parameter blocks
//! (`name\n`, `rank\n`, `dims…\n`, little-endian f32 data).

mod conv;
mod dense;

pub use conv::ConvDenoiser;
pub(crate) use conv::ConvGrads;
pub use dense::DenseDenoiser;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Dimension of the sinusoidal time embedding fed to every architecture.
pub const TIME_EMBED_DIM: usize = 64;

/// A trained (or stub) ε-predictor: maps a noisy latent and a step index to a
/// noise estimate of the same shape.
pub trait NoisePredictor: Send + Sync {
    fn latent_dims(&self) -> (usize, usize);

    /// ε̂ = ε_δ(z, t).
    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64>;

    /// Vector–Jacobian product `Jᵀ·v` of [`Self::predict`] with respect to
    /// `z` at `(z, t)`.
    fn predict_vjp(&self, z: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Array2<f64>;
}

/// Sinusoidal positional embedding of the step index.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut emb = Array1::zeros(dim);
    for k in 0..half {
        let exponent = if half > 1 {
            k as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (10000.0f64).powf(-exponent);
        emb[k] = (t as f64 * freq).sin();
        emb[half + k] = (t as f64 * freq).cos();
    }
    emb
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Adaptive-moment optimizer with per-tensor state, addressed by a stable
/// tensor index.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Advances the shared step counter; call once per optimization step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, tensor_idx: usize, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len());
        if self.moments.len() <= tensor_idx {
            self.moments.resize_with(tensor_idx + 1, || None);
        }
        let (m, v) = self.moments[tensor_idx]
            .get_or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let t = self.step.max(1) as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..param.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// A named parameter tensor as stored in checkpoints.
pub struct ParamBlock {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// A denoiser of either architecture.
pub enum DenoiserModel {
    Dense(DenseDenoiser),
    Conv(ConvDenoiser),
}

impl DenoiserModel {
    pub fn arch_descriptor(&self) -> String {
        match self {
            DenoiserModel::Dense(d) => d.arch_descriptor(),
            DenoiserModel::Conv(c) => c.arch_descriptor(),
        }
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        match self {
            DenoiserModel::Dense(d) => d.param_blocks(),
            DenoiserModel::Conv(c) => c.param_blocks(),
        }
    }
}

impl NoisePredictor for DenoiserModel {
    fn latent_dims(&self) -> (usize, usize) {
        match self {
            DenoiserModel::Dense(d) => d.latent_dims(),
            DenoiserModel::Conv(c) => c.latent_dims(),
        }
    }

    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64> {
        match self {
            DenoiserModel::Dense(d) => d.predict(z, t),
            DenoiserModel::Conv(c) => c.predict(z, t),
        }
    }

    fn predict_vjp(&self, z: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Array2<f64> {
        match self {
            DenoiserModel::Dense(d) => d.predict_vjp(z, t, cotangent),
            DenoiserModel::Conv(c) => c.predict_vjp(z, t, cotangent),
        }
    }
}

const CKPT_MAGIC: &str = "RINVDNZ 1";

pub fn checkpoint_bytes(model: &DenoiserModel) -> Vec<u8> {
    let mut out = format!("{CKPT_MAGIC}\n{}\n", model.arch_descriptor()).into_bytes();
    for block in model.param_blocks() {
        out.extend_from_slice(block.name.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(block.dims.len().to_string().as_bytes());
        out.push(b'\n');
        let dims = block
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.extend_from_slice(dims.as_bytes());
        out.push(b'\n');
        for v in &block.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &DenoiserModel) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model))
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take_line = |pos: &mut usize| -> Result<String> {
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos] != b'\n' {
            *pos += 1;
        }
        if *pos >= bytes.len() {
            return Err(Error::format(Some(path.into()), "truncated checkpoint"));
        }
        let line = std::str::from_utf8(&bytes[start..*pos])
            .map_err(|_| Error::format(Some(path.into()), "non-UTF-8 checkpoint header"))?
            .to_string();
        *pos += 1;
        Ok(line)
    };
    if take_line(&mut pos)? != CKPT_MAGIC {
        return Err(Error::format(Some(path.into()), "bad checkpoint magic"));
    }
    let arch = take_line(&mut pos)?;
    let mut blocks = Vec::new();
    while pos < bytes.len() {
        let name = take_line(&mut pos)?;
        let rank: usize = take_line(&mut pos)?
            .parse()
            .map_err(|_| Error::format(Some(path.into()), "bad block rank"))?;
        let dims_line = take_line(&mut pos)?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(Some(path.into()), "bad block dims"))?;
        if dims.len() != rank {
            return Err(Error::format(
                Some(path.into()),
                format!("block '{name}': rank {rank} but {} dims", dims.len()),
            ));
        }
        let count: usize = dims.iter().product();
        let end = pos + count * 4;
        if end > bytes.len() {
            return Err(Error::format(
                Some(path.into()),
                format!("block '{name}': truncated data"),
            ));
        }
        let data: Vec<f64> = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        pos = end;
        blocks.push(ParamBlock { name, dims, data });
    }
    let kind = arch.split_whitespace().next().unwrap_or("");
    match kind {
        "dense" => Ok(DenoiserModel::Dense(DenseDenoiser::from_blocks(
            &arch, blocks,
        )?)),
        "conv3" => Ok(DenoiserModel::Conv(ConvDenoiser::from_blocks(
            &arch, blocks,
        )?)),
        other => Err(Error::format(
            Some(path.into()),
            format!("unknown architecture '{other}'"),
        )),
    }
}

/// Parses `key value` pairs from an architecture descriptor tail.
pub(crate) fn descriptor_field(arch: &str, key: &str) -> Result<usize> {
    let tokens: Vec<&str> = arch.split_whitespace().collect();
    for pair in tokens.windows(2) {
        if pair[0] == key {
            return pair[1]
                .parse()
                .map_err(|_| Error::format(None, format!("bad descriptor field '{key}'")));
        }
    }
    Err(Error::format(
        None,
        format!("descriptor missing field '{key}': '{arch}'"),
    ))
}

pub(crate) fn block_by_name(blocks: &[ParamBlock], name: &str) -> Result<ParamBlock> {
    blocks
        .iter()
        .find(|b| b.name == name)
        .map(|b| ParamBlock {
            name: b.name.clone(),
            dims: b.dims.clone(),
            data: b.data.clone(),
        })
        .ok_or_else(|| Error::format(None, format!("checkpoint missing block '{name}'")))
}

/// Fixed-output predictors for algebra checks.
pub mod stubs {
    use ndarray::Array2;

    use super::NoisePredictor;

    /// Returns a stored tensor regardless of input.
    pub struct ConstantEps {
        out: Array2<f64>,
    }

    impl ConstantEps {
        pub fn new(out: Array2<f64>) -> ConstantEps {
            ConstantEps { out }
        }
    }

    impl NoisePredictor for ConstantEps {
        fn latent_dims(&self) -> (usize, usize) {
            self.out.dim()
        }

        fn predict(&self, _z: &Array2<f64>, _t: usize) -> Array2<f64> {
            self.out.clone()
        }

        fn predict_vjp(
            &self,
            _z: &Array2<f64>,
            _t: usize,
            _cotangent: &Array2<f64>,
        ) -> Array2<f64> {
            Array2::zeros(self.out.dim())
        }
    }

    /// Returns zeros.
    pub struct ZeroEps {
        dims: (usize, usize),
    }

    impl ZeroEps {
        pub fn new(dims: (usize, usize)) -> ZeroEps {
            ZeroEps { dims }
        }
    }

    impl NoisePredictor for ZeroEps {
        fn latent_dims(&self) -> (usize, usize) {
            self.dims
        }

        fn predict(&self, _z: &Array2<f64>, _t: usize) -> Array2<f64> {
            Array2::zeros(self.dims)
        }

        fn predict_vjp(
            &self,
            _z: &Array2<f64>,
            _t: usize,
            _cotangent: &Array2<f64>,
        ) -> Array2<f64> {
            Array2::zeros(self.dims)
        }
    }
}
