//! Time-conditioned convolutional encoder–decoder ε-predictor.
//!
//! Three resolution levels at channel widths 32/64/128, stride-2 downsampling
//! convolutions, nearest-neighbor upsampling, additive skip connections, and
//! SiLU activations. The time embedding enters additively per level through a
//! learned per-channel projection. Convolutions run as im2col + GEMM with a
//! matching col2im scatter for backprop.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{
    block_by_name, descriptor_field, silu, silu_prime, time_embedding, NoisePredictor,
    ParamBlock, TIME_EMBED_DIM,
};

pub const CONV_WIDTHS: [usize; 3] = [32, 64, 128];

/// 3×3 convolution with pad 1 stored as a `(c_out, c_in·9)` GEMM weight.
#[derive(Debug, Clone)]
struct Conv2d {
    w: Array2<f64>,
    b: Array1<f64>,
    c_in: usize,
    c_out: usize,
    stride: usize,
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

fn im2col(x: &Array3<f64>, stride: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let ho = out_dim(h, stride);
    let wo = out_dim(w, stride);
    let mut cols = Array2::zeros((c * 9, ho * wo));
    for ch in 0..c {
        for ki in 0..3usize {
            for kj in 0..3usize {
                let row = ch * 9 + ki * 3 + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        cols[[row, oi * wo + oj]] = x[[ch, ii as usize, jj as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, dims: (usize, usize, usize), stride: usize) -> Array3<f64> {
    let (c, h, w) = dims;
    let ho = out_dim(h, stride);
    let wo = out_dim(w, stride);
    let mut x = Array3::zeros(dims);
    for ch in 0..c {
        for ki in 0..3usize {
            for kj in 0..3usize {
                let row = ch * 9 + ki * 3 + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        x[[ch, ii as usize, jj as usize]] += cols[[row, oi * wo + oj]];
                    }
                }
            }
        }
    }
    x
}

impl Conv2d {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Conv2d {
        let fan_in = c_in * 9;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((c_out, fan_in), |_| {
            let g: f64 = StandardNormal.sample(rng);
            g * std
        });
        Conv2d {
            w,
            b: Array1::zeros(c_out),
            c_in,
            c_out,
            stride,
        }
    }

    /// Returns the output map and the im2col matrix for backprop.
    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let (ho, wo) = (out_dim(h, self.stride), out_dim(w, self.stride));
        let cols = im2col(x, self.stride);
        let mut y_flat = self.w.dot(&cols);
        for (c, mut row) in y_flat.axis_iter_mut(Axis(0)).enumerate() {
            row += self.b[c];
        }
        let y = Array3::from_shape_vec((self.c_out, ho, wo), y_flat.into_raw_vec_and_offset().0)
            .expect("conv output reshape");
        (y, cols)
    }

    /// Backprop: given d_out and the cached im2col matrix, produces parameter
    /// gradients and the input gradient.
    fn backward(
        &self,
        d_out: &Array3<f64>,
        cols: &Array2<f64>,
        input_dims: (usize, usize, usize),
    ) -> (Array2<f64>, Array1<f64>, Array3<f64>) {
        let (co, ho, wo) = d_out.dim();
        let d_flat =
            Array2::from_shape_vec((co, ho * wo), d_out.iter().cloned().collect())
                .expect("conv grad reshape");
        let dw = d_flat.dot(&cols.t());
        let db = d_flat.sum_axis(Axis(1));
        let dcols = self.w.t().dot(&d_flat);
        let dx = col2im(&dcols, input_dims, self.stride);
        (dw, db, dx)
    }
}

fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, 2 * h, 2 * w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[[ch, i, j]];
                y[[ch, 2 * i, 2 * j]] = v;
                y[[ch, 2 * i, 2 * j + 1]] = v;
                y[[ch, 2 * i + 1, 2 * j]] = v;
                y[[ch, 2 * i + 1, 2 * j + 1]] = v;
            }
        }
    }
    y
}

fn upsample2_backward(d_out: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = d_out.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                dx[[ch, i, j]] = d_out[[ch, 2 * i, 2 * j]]
                    + d_out[[ch, 2 * i, 2 * j + 1]]
                    + d_out[[ch, 2 * i + 1, 2 * j]]
                    + d_out[[ch, 2 * i + 1, 2 * j + 1]];
            }
        }
    }
    dx
}

/// Per-channel additive time conditioning: `Linear(temb) → bias per channel`.
#[derive(Debug, Clone)]
struct TimeProj {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl TimeProj {
    fn new(c_out: usize, rng: &mut ChaCha8Rng) -> TimeProj {
        let std = (2.0 / TIME_EMBED_DIM as f64).sqrt();
        TimeProj {
            w: Array2::from_shape_fn((c_out, TIME_EMBED_DIM), |_| {
                let g: f64 = StandardNormal.sample(rng);
                g * std
            }),
            b: Array1::zeros(c_out),
        }
    }

    fn forward(&self, emb: &Array1<f64>) -> Array1<f64> {
        self.w.dot(emb) + &self.b
    }
}

#[derive(Debug, Clone)]
pub struct ConvDenoiser {
    l_az: usize,
    l_rng: usize,
    stem: Conv2d,
    down1: Conv2d,
    enc2: Conv2d,
    down2: Conv2d,
    mid: Conv2d,
    proj2: Conv2d,
    proj1: Conv2d,
    head: Conv2d,
    temb1: TimeProj,
    temb2: TimeProj,
    temb3: TimeProj,
}

/// Every intermediate needed by the backward pass.
struct ConvCache {
    emb: Array1<f64>,
    cols_stem: Array2<f64>,
    pre1: Array3<f64>,
    cols_down1: Array2<f64>,
    pre_d1: Array3<f64>,
    cols_enc2: Array2<f64>,
    pre2: Array3<f64>,
    cols_down2: Array2<f64>,
    pre_d2: Array3<f64>,
    cols_mid: Array2<f64>,
    pre_mid: Array3<f64>,
    cols_proj2: Array2<f64>,
    pre_p2: Array3<f64>,
    cols_proj1: Array2<f64>,
    pre_p1: Array3<f64>,
}

/// Parameter gradients, ordered like [`ConvDenoiser::param_blocks`].
pub(crate) struct ConvGrads {
    tensors: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl ConvGrads {
    pub(crate) fn zeros_like(net: &ConvDenoiser) -> ConvGrads {
        let convs = net.convs();
        let mut tensors: Vec<Array2<f64>> =
            convs.iter().map(|c| Array2::zeros(c.w.dim())).collect();
        let mut biases: Vec<Array1<f64>> =
            convs.iter().map(|c| Array1::zeros(c.b.len())).collect();
        for tp in [&net.temb1, &net.temb2, &net.temb3] {
            tensors.push(Array2::zeros(tp.w.dim()));
            biases.push(Array1::zeros(tp.b.len()));
        }
        ConvGrads { tensors, biases }
    }

    pub(crate) fn add(&mut self, other: &ConvGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl ConvDenoiser {
    pub fn new(l_az: usize, l_rng: usize, seed: u64) -> Result<ConvDenoiser> {
        if l_az % 4 != 0 || l_rng % 4 != 0 {
            return Err(Error::Invalid(format!(
                "conv denoiser needs latent dims divisible by 4, got {l_az}x{l_rng}"
            )));
        }
        let [c1, c2, c3] = CONV_WIDTHS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ConvDenoiser {
            l_az,
            l_rng,
            stem: Conv2d::new(1, c1, 1, &mut rng),
            down1: Conv2d::new(c1, c2, 2, &mut rng),
            enc2: Conv2d::new(c2, c2, 1, &mut rng),
            down2: Conv2d::new(c2, c3, 2, &mut rng),
            mid: Conv2d::new(c3, c3, 1, &mut rng),
            proj2: Conv2d::new(c3, c2, 1, &mut rng),
            proj1: Conv2d::new(c2, c1, 1, &mut rng),
            head: Conv2d::new(c1, 1, 1, &mut rng),
            temb1: TimeProj::new(c1, &mut rng),
            temb2: TimeProj::new(c2, &mut rng),
            temb3: TimeProj::new(c3, &mut rng),
        })
    }

    pub fn arch_descriptor(&self) -> String {
        format!(
            "conv3 az {} rng {} temb {}",
            self.l_az, self.l_rng, TIME_EMBED_DIM
        )
    }

    fn convs(&self) -> [&Conv2d; 8] {
        [
            &self.stem,
            &self.down1,
            &self.enc2,
            &self.down2,
            &self.mid,
            &self.proj2,
            &self.proj1,
            &self.head,
        ]
    }

    fn add_channel_bias(map: &mut Array3<f64>, bias: &Array1<f64>) {
        for (c, mut plane) in map.axis_iter_mut(Axis(0)).enumerate() {
            plane += bias[c];
        }
    }

    fn forward_cached(&self, z: &Array2<f64>, t: usize) -> (Array3<f64>, ConvCache) {
        let (h, w) = z.dim();
        let x = Array3::from_shape_vec((1, h, w), z.iter().cloned().collect())
            .expect("latent reshape");
        let emb = time_embedding(t, TIME_EMBED_DIM);

        let (mut pre1, cols_stem) = self.stem.forward(&x);
        Self::add_channel_bias(&mut pre1, &self.temb1.forward(&emb));
        let f1 = pre1.mapv(silu);

        let (pre_d1, cols_down1) = self.down1.forward(&f1);
        let d1 = pre_d1.mapv(silu);

        let (mut pre2, cols_enc2) = self.enc2.forward(&d1);
        Self::add_channel_bias(&mut pre2, &self.temb2.forward(&emb));
        let f2 = pre2.mapv(silu);

        let (pre_d2, cols_down2) = self.down2.forward(&f2);
        let d2 = pre_d2.mapv(silu);

        let (mut pre_mid, cols_mid) = self.mid.forward(&d2);
        Self::add_channel_bias(&mut pre_mid, &self.temb3.forward(&emb));
        let m = pre_mid.mapv(silu);

        let u2 = upsample2(&m);
        let (mut pre_p2, cols_proj2) = self.proj2.forward(&u2);
        pre_p2 += &f2;
        let g2 = pre_p2.mapv(silu);

        let u1 = upsample2(&g2);
        let (mut pre_p1, cols_proj1) = self.proj1.forward(&u1);
        pre_p1 += &f1;
        let g1 = pre_p1.mapv(silu);

        let (out, _) = self.head.forward(&g1);

        (
            out,
            ConvCache {
                emb,
                cols_stem,
                pre1,
                cols_down1,
                pre_d1,
                cols_enc2,
                pre2,
                cols_down2,
                pre_d2,
                cols_mid,
                pre_mid,
                cols_proj2,
                pre_p2,
                cols_proj1,
                pre_p1,
            },
        )
    }

    /// Full backward pass. Returns parameter gradients and the input
    /// gradient.
    fn backward(&self, cache: &ConvCache, d_out: &Array3<f64>) -> (ConvGrads, Array2<f64>) {
        let [c1, c2, c3] = CONV_WIDTHS;
        let (h, w) = (self.l_az, self.l_rng);
        let g1 = cache.pre_p1.mapv(silu);

        // head
        let cols_head = im2col(&g1, 1);
        let (dw_head, db_head, dg1) = self.head.backward(d_out, &cols_head, (c1, h, w));

        // proj1 + skip from f1
        let da_p1 = &dg1 * &cache.pre_p1.mapv(silu_prime);
        let (dw_p1, db_p1, du1) =
            self.proj1
                .backward(&da_p1, &cache.cols_proj1, (c2, h, w));
        let df1_skip = da_p1;

        // up from g2
        let dg2 = upsample2_backward(&du1);
        let da_p2 = &dg2 * &cache.pre_p2.mapv(silu_prime);
        let (dw_p2, db_p2, du2) =
            self.proj2
                .backward(&da_p2, &cache.cols_proj2, (c3, h / 2, w / 2));
        let df2_skip = da_p2;

        // mid
        let dm = upsample2_backward(&du2);
        let da_mid = &dm * &cache.pre_mid.mapv(silu_prime);
        let (dw_mid, db_mid, dd2) =
            self.mid
                .backward(&da_mid, &cache.cols_mid, (c3, h / 4, w / 4));
        let dtemb3: Array1<f64> = channel_sums(&da_mid);

        // down2
        let da_d2 = &dd2 * &cache.pre_d2.mapv(silu_prime);
        let (dw_d2, db_d2, df2_down) =
            self.down2
                .backward(&da_d2, &cache.cols_down2, (c2, h / 2, w / 2));

        // enc2
        let df2 = &df2_down + &df2_skip;
        let da_enc2 = &df2 * &cache.pre2.mapv(silu_prime);
        let (dw_e2, db_e2, dd1) =
            self.enc2
                .backward(&da_enc2, &cache.cols_enc2, (c2, h / 2, w / 2));
        let dtemb2 = channel_sums(&da_enc2);

        // down1
        let da_d1 = &dd1 * &cache.pre_d1.mapv(silu_prime);
        let (dw_d1, db_d1, df1_down) =
            self.down1.backward(&da_d1, &cache.cols_down1, (c1, h, w));

        // stem
        let df1 = &df1_down + &df1_skip;
        let da_stem = &df1 * &cache.pre1.mapv(silu_prime);
        let (dw_stem, db_stem, dx) =
            self.stem.backward(&da_stem, &cache.cols_stem, (1, h, w));
        let dtemb1 = channel_sums(&da_stem);

        let grads = ConvGrads {
            tensors: vec![
                dw_stem,
                dw_d1,
                dw_e2,
                dw_d2,
                dw_mid,
                dw_p2,
                dw_p1,
                dw_head,
                outer(&dtemb1, &cache.emb),
                outer(&dtemb2, &cache.emb),
                outer(&dtemb3, &cache.emb),
            ],
            biases: vec![
                db_stem, db_d1, db_e2, db_d2, db_mid, db_p2, db_p1, db_head, dtemb1, dtemb2,
                dtemb3,
            ],
        };
        let d_input = Array2::from_shape_vec((h, w), dx.iter().cloned().collect())
            .expect("input grad reshape");
        (grads, d_input)
    }

    /// One training item: forward, squared-error backward against `target`
    /// with the given output cotangent scale. Returns (sum of squared
    /// residuals, grads).
    pub(crate) fn grad_step(
        &self,
        z: &Array2<f64>,
        t: usize,
        target: &Array2<f64>,
        cotangent_scale: f64,
    ) -> (f64, ConvGrads) {
        let (out, cache) = self.forward_cached(z, t);
        let (h, w) = z.dim();
        let target3 = Array3::from_shape_vec((1, h, w), target.iter().cloned().collect())
            .expect("target reshape");
        let resid = &out - &target3;
        let sq = resid.mapv(|d| d * d).sum();
        let d_out = resid.mapv(|d| 2.0 * d * cotangent_scale);
        let (grads, _) = self.backward(&cache, &d_out);
        (sq, grads)
    }

    pub(crate) fn apply_grads(&mut self, grads: &ConvGrads, adam: &mut super::Adam) {
        adam.begin_step();
        let mut idx = 0usize;
        {
            let convs: [&mut Conv2d; 8] = [
                &mut self.stem,
                &mut self.down1,
                &mut self.enc2,
                &mut self.down2,
                &mut self.mid,
                &mut self.proj2,
                &mut self.proj1,
                &mut self.head,
            ];
            for (k, conv) in convs.into_iter().enumerate() {
                adam.update(idx, conv.w.as_slice_mut().unwrap(), grads.tensors[k].as_slice().unwrap());
                idx += 1;
                adam.update(idx, conv.b.as_slice_mut().unwrap(), grads.biases[k].as_slice().unwrap());
                idx += 1;
            }
        }
        let projs: [&mut TimeProj; 3] = [&mut self.temb1, &mut self.temb2, &mut self.temb3];
        for (k, tp) in projs.into_iter().enumerate() {
            adam.update(idx, tp.w.as_slice_mut().unwrap(), grads.tensors[8 + k].as_slice().unwrap());
            idx += 1;
            adam.update(idx, tp.b.as_slice_mut().unwrap(), grads.biases[8 + k].as_slice().unwrap());
            idx += 1;
        }
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let names = [
            "stem", "down1", "enc2", "down2", "mid", "proj2", "proj1", "head",
        ];
        let mut blocks = Vec::new();
        for (name, conv) in names.iter().zip(self.convs()) {
            blocks.push(ParamBlock {
                name: format!("{name}.w"),
                dims: vec![conv.w.nrows(), conv.w.ncols()],
                data: conv.w.iter().cloned().collect(),
            });
            blocks.push(ParamBlock {
                name: format!("{name}.b"),
                dims: vec![conv.b.len()],
                data: conv.b.to_vec(),
            });
        }
        for (name, tp) in [
            ("temb1", &self.temb1),
            ("temb2", &self.temb2),
            ("temb3", &self.temb3),
        ] {
            blocks.push(ParamBlock {
                name: format!("{name}.w"),
                dims: vec![tp.w.nrows(), tp.w.ncols()],
                data: tp.w.iter().cloned().collect(),
            });
            blocks.push(ParamBlock {
                name: format!("{name}.b"),
                dims: vec![tp.b.len()],
                data: tp.b.to_vec(),
            });
        }
        blocks
    }

    pub fn from_blocks(arch: &str, blocks: Vec<ParamBlock>) -> Result<ConvDenoiser> {
        let l_az = descriptor_field(arch, "az")?;
        let l_rng = descriptor_field(arch, "rng")?;
        let mut net = ConvDenoiser::new(l_az, l_rng, 0)?;
        let fill_conv = |conv: &mut Conv2d, name: &str| -> Result<()> {
            let wb = block_by_name(&blocks, &format!("{name}.w"))?;
            if wb.dims != vec![conv.c_out, conv.c_in * 9] {
                return Err(Error::format(
                    None,
                    format!("block '{name}.w' dims {:?} unexpected", wb.dims),
                ));
            }
            conv.w = Array2::from_shape_vec(conv.w.dim(), wb.data)
                .map_err(|e| Error::format(None, format!("{name}.w: {e}")))?;
            let bb = block_by_name(&blocks, &format!("{name}.b"))?;
            conv.b = Array1::from_vec(bb.data);
            if conv.b.len() != conv.c_out {
                return Err(Error::format(None, format!("block '{name}.b' wrong len")));
            }
            Ok(())
        };
        fill_conv(&mut net.stem, "stem")?;
        fill_conv(&mut net.down1, "down1")?;
        fill_conv(&mut net.enc2, "enc2")?;
        fill_conv(&mut net.down2, "down2")?;
        fill_conv(&mut net.mid, "mid")?;
        fill_conv(&mut net.proj2, "proj2")?;
        fill_conv(&mut net.proj1, "proj1")?;
        fill_conv(&mut net.head, "head")?;
        for (name, tp) in [
            ("temb1", &mut net.temb1),
            ("temb2", &mut net.temb2),
            ("temb3", &mut net.temb3),
        ] {
            let wb = block_by_name(&blocks, &format!("{name}.w"))?;
            tp.w = Array2::from_shape_vec(tp.w.dim(), wb.data)
                .map_err(|e| Error::format(None, format!("{name}.w: {e}")))?;
            let bb = block_by_name(&blocks, &format!("{name}.b"))?;
            tp.b = Array1::from_vec(bb.data);
        }
        Ok(net)
    }
}

fn channel_sums(map: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(map.axis_iter(Axis(0)).map(|plane| plane.sum()))
}

fn outer(col: &Array1<f64>, row: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((col.len(), row.len()));
    for i in 0..col.len() {
        for j in 0..row.len() {
            out[[i, j]] = col[i] * row[j];
        }
    }
    out
}

impl NoisePredictor for ConvDenoiser {
    fn latent_dims(&self) -> (usize, usize) {
        (self.l_az, self.l_rng)
    }

    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64> {
        assert_eq!(z.dim(), self.latent_dims(), "latent shape mismatch");
        let (out, _) = self.forward_cached(z, t);
        Array2::from_shape_vec(z.dim(), out.into_raw_vec_and_offset().0)
            .expect("output reshape")
    }

    fn predict_vjp(&self, z: &Array2<f64>, t: usize, cotangent: &Array2<f64>) -> Array2<f64> {
        assert_eq!(z.dim(), self.latent_dims(), "latent shape mismatch");
        let (_, cache) = self.forward_cached(z, t);
        let (h, w) = z.dim();
        let d_out = Array3::from_shape_vec((1, h, w), cotangent.iter().cloned().collect())
            .expect("cotangent reshape");
        let (_, d_input) = self.backward(&cache, &d_out);
        d_input
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_latent(dims: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(dims, |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn rejects_unsplittable_dims() {
        assert!(ConvDenoiser::new(6, 8, 0).is_err());
        assert!(ConvDenoiser::new(8, 12, 0).is_ok());
    }

    #[test]
    fn output_shape_matches_input() {
        let net = ConvDenoiser::new(8, 12, 1).unwrap();
        let z = random_latent((8, 12), 2);
        let out = net.predict(&z, 4);
        assert_eq!(out.dim(), (8, 12));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_stride_dims() {
        assert_eq!(out_dim(8, 1), 8);
        assert_eq!(out_dim(8, 2), 4);
        assert_eq!(out_dim(12, 2), 6);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array3::from_shape_fn((2, 6, 4), |_| rng.random::<f64>() - 0.5);
        let cols = im2col(&x, 1);
        let u = Array2::from_shape_fn(cols.dim(), |_| rng.random::<f64>() - 0.5);
        let lhs: f64 = (&cols * &u).sum();
        let rhs: f64 = (&x * &col2im(&u, (2, 6, 4), 1)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn vjp_matches_finite_difference() {
        let net = ConvDenoiser::new(8, 8, 5).unwrap();
        let z = random_latent((8, 8), 6);
        let v = random_latent((8, 8), 7);
        let g = net.predict_vjp(&z, 3, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for _ in 0..8 {
            let i = rng.random_range(0..8);
            let j = rng.random_range(0..8);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[[i, j]] += h;
            zm[[i, j]] -= h;
            let fp: f64 = (&net.predict(&zp, 3) * &v).sum();
            let fm: f64 = (&net.predict(&zm, 3) * &v).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (g[[i, j]] - fd).abs() <= 1e-5 * g[[i, j]].abs().max(fd.abs()).max(1.0),
                "({i},{j}): vjp {} vs fd {fd}",
                g[[i, j]]
            );
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let net = ConvDenoiser::new(8, 8, 9).unwrap();
        let z = random_latent((8, 8), 10);
        let target = random_latent((8, 8), 11);
        let (_, grads) = net.grad_step(&z, 2, &target, 1.0);
        let loss_of = |n: &ConvDenoiser| -> f64 {
            let out = n.predict(&z, 2);
            (&out - &target).mapv(|d| d * d).sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        // One weight from an encoder conv, one from a decoder conv, a bias,
        // and a time projection weight.
        for _ in 0..4 {
            let r = rng.random_range(0..net.down1.w.nrows());
            let c = rng.random_range(0..net.down1.w.ncols());
            let mut plus = net.clone();
            plus.down1.w[[r, c]] += h;
            let mut minus = net.clone();
            minus.down1.w[[r, c]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.tensors[1][[r, c]];
            assert!(
                (a - fd).abs() <= 2e-5 * a.abs().max(fd.abs()).max(1.0),
                "down1.w[{r},{c}]: {a} vs {fd}"
            );
        }
        for _ in 0..4 {
            let r = rng.random_range(0..net.proj1.w.nrows());
            let c = rng.random_range(0..net.proj1.w.ncols());
            let mut plus = net.clone();
            plus.proj1.w[[r, c]] += h;
            let mut minus = net.clone();
            minus.proj1.w[[r, c]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.tensors[6][[r, c]];
            assert!(
                (a - fd).abs() <= 2e-5 * a.abs().max(fd.abs()).max(1.0),
                "proj1.w[{r},{c}]: {a} vs {fd}"
            );
        }
        {
            let mut plus = net.clone();
            plus.mid.b[3] += h;
            let mut minus = net.clone();
            minus.mid.b[3] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.biases[4][3];
            assert!((a - fd).abs() <= 2e-5 * a.abs().max(fd.abs()).max(1.0));
        }
        {
            let mut plus = net.clone();
            plus.temb2.w[[5, 9]] += h;
            let mut minus = net.clone();
            minus.temb2.w[[5, 9]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.tensors[9][[5, 9]];
            assert!(
                (a - fd).abs() <= 2e-5 * a.abs().max(fd.abs()).max(1.0),
                "temb2.w: {a} vs {fd}"
            );
        }
    }
}
