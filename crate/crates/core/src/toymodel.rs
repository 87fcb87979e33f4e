//! A small deterministic DiT-style denoiser and the synthetic motion scenes
//! used to stress it.
//!
//! The model predicts a clean image from a noisy latent: tokens are embedded
//! (patch projection + timestep embedding + label embedding), pass through `L`
//! pre-norm attention/MLP blocks and are projected back to pixels. The sampler
//! turns that prediction into a noise estimate `x - x̂0` and takes plain Euler
//! steps, so with small enough weights the sampling map is a contraction.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::{matmul, softmax_rows, Matrix, Tensor3};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Shape parameters that, together with a seed, fully determine the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub layers: usize,
    pub channels: usize,
    pub patches: usize,
    pub patch_dim: usize,
    /// Sampling steps `T`, which is also the size of the timestep-embedding table.
    pub max_timesteps: usize,
    pub num_classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            layers: 8,
            channels: 32,
            patches: 16,
            patch_dim: 16,
            max_timesteps: 50,
            num_classes: 10,
        }
    }
}

impl ModelDims {
    pub fn mlp_width(&self) -> usize {
        4 * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// `D × 4D`
    pub w1: Matrix,
    /// `4D × D`
    pub w2: Matrix,
}

impl LayerWeights {
    fn scaled(&self, c: f64) -> Self {
        Self {
            wq: self.wq.scaled(c),
            wk: self.wk.scaled(c),
            wv: self.wv.scaled(c),
            wo: self.wo.scaled(c),
            w1: self.w1.scaled(c),
            w2: self.w2.scaled(c),
        }
    }
}

/// All parameters of the toy denoiser. Immutable once built; share freely.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub dims: ModelDims,
    pub seed: u64,
    /// `patch_dim × D`
    pub embed: Matrix,
    /// `max_timesteps × D`
    pub time_embed: Matrix,
    /// `num_classes × D`
    pub label_embed: Matrix,
    pub layers: Vec<LayerWeights>,
    /// `D × patch_dim`
    pub decode: Matrix,
}

impl ModelWeights {
    /// Draw every weight from splitmix64, uniform in `[-1/√D, 1/√D]`.
    ///
    /// The timestep table is `s·sin(ω_d·(t/T)² + φ_d)` with per-channel
    /// frequency and phase drawn from the same stream, so consecutive rows
    /// differ smoothly and the embedding settles as `t → 0`.
    pub fn init(seed: u64, dims: ModelDims) -> Self {
        let d = dims.channels;
        let s = 1.0 / (d as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let draw =
            |rows: usize, cols: usize, rng: &mut SplitMix64| Matrix::from_fn(rows, cols, |_, _| rng.symmetric(s));

        let embed = draw(dims.patch_dim, d, &mut rng);
        let freqs: Vec<f64> = (0..d).map(|_| PI * rng.next_f64()).collect();
        let phases: Vec<f64> = (0..d).map(|_| TAU * rng.next_f64()).collect();
        let horizon = dims.max_timesteps.max(1) as f64;
        let time_embed = Matrix::from_fn(dims.max_timesteps, d, |t, c| {
            let level = t as f64 / horizon;
            s * (freqs[c] * level * level + phases[c]).sin()
        });
        let label_embed = draw(dims.num_classes, d, &mut rng);
        let layers = (0..dims.layers)
            .map(|_| LayerWeights {
                wq: draw(d, d, &mut rng),
                wk: draw(d, d, &mut rng),
                wv: draw(d, d, &mut rng),
                wo: draw(d, d, &mut rng),
                w1: draw(d, dims.mlp_width(), &mut rng),
                w2: draw(dims.mlp_width(), d, &mut rng),
            })
            .collect();
        let decode = draw(d, dims.patch_dim, &mut rng);

        Self {
            dims,
            seed,
            embed,
            time_embed,
            label_embed,
            layers,
            decode,
        }
    }

    /// Every parameter multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dims: self.dims,
            seed: self.seed,
            embed: self.embed.scaled(factor),
            time_embed: self.time_embed.scaled(factor),
            label_embed: self.label_embed.scaled(factor),
            layers: self.layers.iter().map(|l| l.scaled(factor)).collect(),
            decode: self.decode.scaled(factor),
        }
    }

    fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.dims.max_timesteps {
            return Err(Error::bad_config(
                "t",
                format!(
                    "timestep {t} outside the {}-entry embedding table",
                    self.dims.max_timesteps
                ),
            ));
        }
        Ok(())
    }
}

/// Convenience wrapper matching the weight-construction signature used elsewhere.
pub fn init_weights(seed: u64, dims: ModelDims) -> ModelWeights {
    ModelWeights::init(seed, dims)
}

/// Noisy input `x_t` at timestep `t`. Pixels are stored patchified, `B × P × patch_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: Tensor3,
    pub t: usize,
}

/// `h⁰ = x·E + time_embed[t] + label_embed[y]`, the two embeddings broadcast over patches.
pub fn embed(x: &LatentState, label: usize, w: &ModelWeights) -> Result<Tensor3> {
    if label >= w.dims.num_classes {
        return Err(Error::BadLabel {
            label,
            num_classes: w.dims.num_classes,
        });
    }
    if x.x.channels() != w.dims.patch_dim {
        return Err(Error::ShapeMismatch(format!(
            "latent has {} values per patch, model expects {}",
            x.x.channels(),
            w.dims.patch_dim
        )));
    }
    w.check_timestep(x.t)?;
    let temb = w.time_embed.row(x.t);
    let lemb = w.label_embed.row(label);
    let slabs = (0..x.x.batch())
        .map(|b| {
            let mut h = matmul(&x.x.batch_matrix(b), &w.embed)?;
            for i in 0..h.rows() {
                for (c, v) in h.row_mut(i).iter_mut().enumerate() {
                    *v += temb[c] + lemb[c];
                }
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_batch_matrices(&slabs)
}

/// Parameter-free layer norm over one token.
pub fn layer_norm(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    v.iter().map(|x| (x - mean) * inv).collect()
}

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

fn layer_norm_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&layer_norm(m.row(r)));
    }
    out
}

/// One transformer block `Block_ℓ(h, t)`.
///
/// ```text
/// a  = LN(h) + time_embed[t]
/// h1 = h + softmax(a·Wq (a·Wk)ᵀ / √D) · a·Wv · Wo
/// h2 = h1 + GELU(LN(h1)·W1)·W2
/// ```
pub fn block_forward(h: &Tensor3, layer: usize, t: usize, w: &ModelWeights) -> Result<Tensor3> {
    let lw = w.layers.get(layer).ok_or(Error::BadLayer {
        layer,
        layers: w.dims.layers,
    })?;
    if h.channels() != w.dims.channels {
        return Err(Error::ShapeMismatch(format!(
            "hidden state has {} channels, model expects {}",
            h.channels(),
            w.dims.channels
        )));
    }
    w.check_timestep(t)?;
    let temb = w.time_embed.row(t);
    let inv_sqrt_d = 1.0 / (w.dims.channels as f64).sqrt();

    let slabs = (0..h.batch())
        .map(|b| {
            let x = h.batch_matrix(b);
            let mut a = layer_norm_rows(&x);
            for r in 0..a.rows() {
                for (v, e) in a.row_mut(r).iter_mut().zip(temb) {
                    *v += e;
                }
            }
            let q = matmul(&a, &lw.wq)?;
            let k = matmul(&a, &lw.wk)?;
            let v = matmul(&a, &lw.wv)?;
            let scores = matmul(&q, &k.transpose())?.scaled(inv_sqrt_d);
            let attn = matmul(&softmax_rows(&scores), &v)?;
            let h1 = x.add(&matmul(&attn, &lw.wo)?)?;

            let hidden = matmul(&layer_norm_rows(&h1), &lw.w1)?.map(gelu);
            h1.add(&matmul(&hidden, &lw.w2)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_batch_matrices(&slabs)
}

/// Linear projection of the last hidden state to pixels (`B × P × patch_dim`).
pub fn decode(h: &Tensor3, w: &ModelWeights) -> Result<Tensor3> {
    let slabs = (0..h.batch())
        .map(|b| matmul(&h.batch_matrix(b), &w.decode))
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_batch_matrices(&slabs)
}

/// Noise estimate implied by a clean-image prediction: `x - x̂0`.
pub fn predicted_noise(x: &LatentState, clean: &Tensor3) -> Result<Tensor3> {
    x.x.sub(clean)
}

/// Deterministic Euler step `x' = x - step_size·eps`, `t' = t - 1`.
pub fn scheduler_step(x: &LatentState, eps: &Tensor3, step_size: f64) -> Result<LatentState> {
    if x.t == 0 {
        return Err(Error::SamplingFinished);
    }
    let next = x.x.zip_with(eps, |xv, e| xv - step_size * e)?;
    Ok(LatentState { x: next, t: x.t - 1 })
}

/// Standard-normal latent noise drawn from `seed`, `batch × patches × patch_dim`.
pub fn latent_noise(seed: u64, batch: usize, patches: usize, patch_dim: usize) -> Tensor3 {
    let mut rng = SplitMix64::new(seed);
    Tensor3::from_fn(batch, patches, patch_dim, |_, _, _| rng.standard_normal())
}

/// One Gaussian blob moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// `(row, col)` in pixels at frame 0.
    pub center: (f64, f64),
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// `(rows, cols)` per frame.
    pub velocity: (f64, f64),
}

/// A synthetic moving scene: Gaussian blobs bouncing inside a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub blobs: Vec<Blob>,
    pub frames: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Random blob placement from `seed`; every blob moves at `speed` pixels per
    /// frame in a random direction. Sigmas are drawn in `[1.5, 3)`.
    pub fn generate(height: usize, width: usize, blob_count: usize, speed: f64, frames: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let blobs = (0..blob_count)
            .map(|_| {
                let row = rng.next_f64() * height.saturating_sub(1) as f64;
                let col = rng.next_f64() * width.saturating_sub(1) as f64;
                let sigma = 1.5 + 1.5 * rng.next_f64();
                let angle = TAU * rng.next_f64();
                Blob {
                    center: (row, col),
                    sigma,
                    velocity: (speed * angle.sin(), speed * angle.cos()),
                }
            })
            .collect();
        Self {
            height,
            width,
            blobs,
            frames,
            seed,
        }
    }

    /// Blob centers at `frame`, reflected at the borders.
    pub fn centers(&self, frame: usize) -> Vec<(f64, f64)> {
        let f = frame as f64;
        self.blobs
            .iter()
            .map(|b| {
                (
                    reflect(b.center.0 + b.velocity.0 * f, self.height.saturating_sub(1) as f64),
                    reflect(b.center.1 + b.velocity.1 * f, self.width.saturating_sub(1) as f64),
                )
            })
            .collect()
    }
}

/// Fold `u` into `[0, extent]` as if bouncing between two mirrors.
fn reflect(u: f64, extent: f64) -> f64 {
    if extent <= 0.0 {
        return 0.0;
    }
    let m = u.rem_euclid(2.0 * extent);
    if m > extent {
        2.0 * extent - m
    } else {
        m
    }
}

/// Render `frame` of the scene: sum of Gaussian blobs, clamped to `[0, 1]`.
pub fn synthetic_scene(spec: &SceneSpec, frame: usize) -> Result<Image> {
    if frame >= spec.frames {
        return Err(Error::BadFrame {
            frame,
            frames: spec.frames,
        });
    }
    let centers = spec.centers(frame);
    Ok(Image::from_fn(spec.width, spec.height, |y, x| {
        let v: f64 = centers
            .iter()
            .zip(&spec.blobs)
            .map(|(&(cy, cx), b)| {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        v.clamp(0.0, 1.0)
    }))
}
