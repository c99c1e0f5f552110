//! Fully connected ε-predictor: flattened latent ⊕ time embedding through two
//! SiLU hidden layers.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{
    block_by_name, descriptor_field, silu, silu_prime, time_embedding, NoisePredictor,
    ParamBlock, TIME_EMBED_DIM,
};

pub const DENSE_HIDDEN: usize = 1024;

#[derive(Debug, Clone)]
pub struct DenseDenoiser {
    l_az: usize,
    l_rng: usize,
    hidden: usize,
    // Weight layout: (fan_in, fan_out), so a batch row-vector multiplies from
    // the left.
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array2<f64>,
    b3: Array1<f64>,
}

/// Cached activations of one batched forward pass.
pub(crate) struct DenseCache {
    h0: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
}

/// Parameter gradients matching [`DenseDenoiser`]'s tensors.
pub(crate) struct DenseGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl DenseDenoiser {
    pub fn new(l_az: usize, l_rng: usize, seed: u64) -> DenseDenoiser {
        Self::with_hidden(l_az, l_rng, DENSE_HIDDEN, seed)
    }

    pub fn with_hidden(l_az: usize, l_rng: usize, hidden: usize, seed: u64) -> DenseDenoiser {
        let latent = l_az * l_rng;
        let in_dim = latent + TIME_EMBED_DIM;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |fan_in: usize, shape: (usize, usize)| -> Array2<f64> {
            let std = (2.0 / fan_in as f64).sqrt();
            Array2::from_shape_fn(shape, |_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * std
            })
        };
        DenseDenoiser {
            l_az,
            l_rng,
            hidden,
            w1: init(in_dim, (in_dim, hidden)),
            b1: Array1::zeros(hidden),
            w2: init(hidden, (hidden, hidden)),
            b2: Array1::zeros(hidden),
            w3: init(hidden, (hidden, latent)),
            b3: Array1::zeros(latent),
        }
    }

    pub fn arch_descriptor(&self) -> String {
        format!(
            "dense az {} rng {} hidden {} temb {}",
            self.l_az, self.l_rng, self.hidden, TIME_EMBED_DIM
        )
    }

    fn latent_len(&self) -> usize {
        self.l_az * self.l_rng
    }

    /// Rows of `z_batch` are flattened latents; returns the batch input with
    /// per-row time embeddings appended.
    fn assemble_input(&self, z_rows: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let b = z_rows.nrows();
        let latent = self.latent_len();
        let mut h0 = Array2::zeros((b, latent + TIME_EMBED_DIM));
        for r in 0..b {
            h0.row_mut(r)
                .slice_mut(ndarray::s![..latent])
                .assign(&z_rows.row(r));
            let emb = time_embedding(ts[r], TIME_EMBED_DIM);
            h0.row_mut(r)
                .slice_mut(ndarray::s![latent..])
                .assign(&emb);
        }
        h0
    }

    /// Batched forward over flattened latents. Returns outputs and the cache
    /// needed for backprop.
    pub(crate) fn forward_batch(
        &self,
        z_rows: &Array2<f64>,
        ts: &[usize],
    ) -> (Array2<f64>, DenseCache) {
        let h0 = self.assemble_input(z_rows, ts);
        let a1 = h0.dot(&self.w1) + &self.b1;
        let h1 = a1.mapv(silu);
        let a2 = h1.dot(&self.w2) + &self.b2;
        let h2 = a2.mapv(silu);
        let out = h2.dot(&self.w3) + &self.b3;
        (out, DenseCache { h0, a1, h1, a2, h2 })
    }

    /// Backpropagates `d_out` through the cached pass, producing parameter
    /// gradients and (optionally used) input gradients.
    pub(crate) fn backward_batch(
        &self,
        cache: &DenseCache,
        d_out: &Array2<f64>,
    ) -> (DenseGrads, Array2<f64>) {
        let dw3 = cache.h2.t().dot(d_out);
        let db3 = d_out.sum_axis(Axis(0));
        let dh2 = d_out.dot(&self.w3.t());
        let da2 = &dh2 * &cache.a2.mapv(silu_prime);
        let dw2 = cache.h1.t().dot(&da2);
        let db2 = da2.sum_axis(Axis(0));
        let dh1 = da2.dot(&self.w2.t());
        let da1 = &dh1 * &cache.a1.mapv(silu_prime);
        let dw1 = cache.h0.t().dot(&da1);
        let db1 = da1.sum_axis(Axis(0));
        let dh0 = da1.dot(&self.w1.t());
        let latent = self.latent_len();
        let d_input = dh0.slice(ndarray::s![.., ..latent]).to_owned();
        (
            DenseGrads {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
                w3: dw3,
                b3: db3,
            },
            d_input,
        )
    }

    /// Applies one optimizer step from accumulated gradients.
    pub(crate) fn apply_grads(&mut self, grads: &DenseGrads, adam: &mut super::Adam) {
        adam.begin_step();
        let pairs: [(&mut [f64], &[f64]); 6] = [
            (self.w1.as_slice_mut().unwrap(), grads.w1.as_slice().unwrap()),
            (self.b1.as_slice_mut().unwrap(), grads.b1.as_slice().unwrap()),
            (self.w2.as_slice_mut().unwrap(), grads.w2.as_slice().unwrap()),
            (self.b2.as_slice_mut().unwrap(), grads.b2.as_slice().unwrap()),
            (self.w3.as_slice_mut().unwrap(), grads.w3.as_slice().unwrap()),
            (self.b3.as_slice_mut().unwrap(), grads.b3.as_slice().unwrap()),
        ];
        for (idx, (param, grad)) in pairs.into_iter().enumerate() {
            adam.update(idx, param, grad);
        }
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let tensor2 = |name: &str, a: &Array2<f64>| ParamBlock {
            name: name.to_string(),
            dims: vec![a.nrows(), a.ncols()],
            data: a.iter().cloned().collect(),
        };
        let tensor1 = |name: &str, a: &Array1<f64>| ParamBlock {
            name: name.to_string(),
            dims: vec![a.len()],
            data: a.to_vec(),
        };
        vec![
            tensor2("w1", &self.w1),
            tensor1("b1", &self.b1),
            tensor2("w2", &self.w2),
            tensor1("b2", &self.b2),
            tensor2("w3", &self.w3),
            tensor1("b3", &self.b3),
        ]
    }

    pub fn from_blocks(arch: &str, blocks: Vec<ParamBlock>) -> Result<DenseDenoiser> {
        let l_az = descriptor_field(arch, "az")?;
        let l_rng = descriptor_field(arch, "rng")?;
        let hidden = descriptor_field(arch, "hidden")?;
        let latent = l_az * l_rng;
        let in_dim = latent + TIME_EMBED_DIM;
        let take2 = |name: &str, shape: (usize, usize)| -> Result<Array2<f64>> {
            let b = block_by_name(&blocks, name)?;
            if b.dims != vec![shape.0, shape.1] {
                return Err(Error::format(
                    None,
                    format!("block '{name}' has dims {:?}, expected {shape:?}", b.dims),
                ));
            }
            Array2::from_shape_vec(shape, b.data)
                .map_err(|e| Error::format(None, format!("block '{name}': {e}")))
        };
        let take1 = |name: &str, len: usize| -> Result<Array1<f64>> {
            let b = block_by_name(&blocks, name)?;
            if b.dims != vec![len] {
                return Err(Error::format(
                    None,
                    format!("block '{name}' has dims {:?}, expected [{len}]", b.dims),
                ));
            }
            Ok(Array1::from_vec(b.data))
        };
        Ok(DenseDenoiser {
            l_az,
            l_rng,
            hidden,
            w1: take2("w1", (in_dim, hidden))?,
            b1: take1("b1", hidden)?,
            w2: take2("w2", (hidden, hidden))?,
            b2: take1("b2", hidden)?,
            w3: take2("w3", (hidden, latent))?,
            b3: take1("b3", latent)?,
        })
    }
}

impl NoisePredictor for DenseDenoiser {
    fn latent_dims(&self) -> (usize, usize) {
        (self.l_az, self.l_rng)
    }

    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64> {
        assert_eq!(z.dim(), self.latent_dims(), "latent shape mismatch");
        let row = Array2::from_shape_vec((1, self.latent_len()), z.iter().cloned().collect())
            .expect("contiguous latent");
        let (out, _) = self.forward_batch(&row, &[t]);
        Array2::from_shape_vec(z.dim(), out.into_raw_vec_and_offset().0)
            .expect("output reshape")
    }

    fn predict_vjp(&self, z: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Array2<f64> {
        assert_eq!(z.dim(), self.latent_dims(), "latent shape mismatch");
        assert_eq!(cotangent.dim(), self.latent_dims(), "cotangent shape mismatch");
        let row = Array2::from_shape_vec((1, self.latent_len()), z.iter().cloned().collect())
            .expect("contiguous latent");
        let (_, cache) = self.forward_batch(&row, &[t]);
        let v = Array2::from_shape_vec(
            (1, self.latent_len()),
            cotangent.iter().cloned().collect(),
        )
        .expect("contiguous cotangent");
        // Input gradient only; parameter gradients are not needed here but the
        // shared backward keeps one code path.
        let dh2 = v.dot(&self.w3.t());
        let da2 = &dh2 * &cache.a2.mapv(silu_prime);
        let dh1 = da2.dot(&self.w2.t());
        let da1 = &dh1 * &cache.a1.mapv(silu_prime);
        let dh0 = da1.dot(&self.w1.t());
        let d_input = dh0.slice(ndarray::s![0, ..self.latent_len()]).to_owned();
        Array2::from_shape_vec(z.dim(), d_input.to_vec()).expect("vjp reshape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_net(seed: u64) -> DenseDenoiser {
        DenseDenoiser::with_hidden(4, 6, 32, seed)
    }

    fn random_latent(dims: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(dims, |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn output_shape_matches_input() {
        let net = tiny_net(0);
        let z = random_latent((4, 6), 1);
        let out = net.predict(&z, 3);
        assert_eq!(out.dim(), (4, 6));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn prediction_is_deterministic() {
        let net = tiny_net(2);
        let z = random_latent((4, 6), 3);
        assert_eq!(net.predict(&z, 5), net.predict(&z, 5));
        assert_ne!(net.predict(&z, 5), net.predict(&z, 6));
    }

    #[test]
    fn vjp_matches_finite_difference_directional_derivative() {
        let net = tiny_net(4);
        let z = random_latent((4, 6), 5);
        let v = random_latent((4, 6), 6);
        let g = net.predict_vjp(&z, 2, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..12 {
            let i = rng.random_range(0..4);
            let j = rng.random_range(0..6);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[[i, j]] += h;
            zm[[i, j]] -= h;
            // d/dz_ij <v, predict(z)> should equal g[i, j].
            let fp: f64 = (&net.predict(&zp, 2) * &v).sum();
            let fm: f64 = (&net.predict(&zm, 2) * &v).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (g[[i, j]] - fd).abs() <= 1e-6 * g[[i, j]].abs().max(fd.abs()).max(1.0),
                "({i},{j}): vjp {} vs fd {fd}",
                g[[i, j]]
            );
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let net = tiny_net(8);
        let z_rows = random_latent((2, 24), 9);
        let target = random_latent((2, 24), 10);
        let ts = [3usize, 7];
        let loss_of = |n: &DenseDenoiser| -> f64 {
            let (out, _) = n.forward_batch(&z_rows, &ts);
            (&out - &target).mapv(|d| d * d).sum()
        };
        let (out, cache) = net.forward_batch(&z_rows, &ts);
        let d_out = (&out - &target).mapv(|d| 2.0 * d);
        let (grads, _) = net.backward_batch(&cache, &d_out);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..10 {
            let r = rng.random_range(0..net.w1.nrows());
            let c = rng.random_range(0..net.w1.ncols());
            let mut plus = net.clone();
            plus.w1[[r, c]] += h;
            let mut minus = net.clone();
            minus.w1[[r, c]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.w1[[r, c]];
            assert!(
                (a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1.0),
                "w1[{r},{c}]: {a} vs {fd}"
            );
        }
        // Spot-check a bias too.
        let mut plus = net.clone();
        plus.b3[0] += h;
        let mut minus = net.clone();
        minus.b3[0] -= h;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        assert!((grads.b3[0] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
    }
}
