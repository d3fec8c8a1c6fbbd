//! Trajectory predictors: a constant-velocity baseline and a trainable
//! multimodal regression head over average-pooled rasters.
//!
//! The head maps a raster to `K·(2·T_f + 1)` numbers:
//!
//! ```text
//! raster (u8) → /255 → average-pool to P×P per channel → flatten (F = C·P²)
//!   → linear F→H → ReLU → linear H→K·(2·T_f+1)
//!   → K×T_f×2 local-frame means, then K confidence logits
//! ```

pub mod baseline;
pub mod checkpoint;
pub mod optim;
pub mod predict;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{MixtureOutput, NllGradient};
use crate::raster::Raster;
use crate::scene::FUTURE_LEN;

pub use baseline::constant_velocity_predict;
pub use optim::{adamw_step, cosine_warm_restart_lr, AdamState, TrainingConfig};
pub use predict::{predict_scenes, to_world_record};
pub use train::{train, train_cache_dir, LogRow, Sample, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of hypotheses.
    pub k: usize,
    /// Future steps per hypothesis.
    pub horizon: usize,
    pub hidden: usize,
    /// Rasters are average-pooled to `pool × pool` per channel.
    pub pool: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 6,
            horizon: FUTURE_LEN,
            hidden: 256,
            pool: 14,
        }
    }
}

impl ModelConfig {
    pub fn output_dim(&self) -> usize {
        self.k * (2 * self.horizon + 1)
    }

    pub fn feature_dim(&self, channels: usize) -> usize {
        channels * self.pool * self.pool
    }
}

/// Nonzero entries of a feature vector. Pooled rasters are mostly empty, so
/// the first layer only touches the rows that matter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseFeatures {
    pub dim: usize,
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl SparseFeatures {
    pub fn from_dense(x: &[f64]) -> Self {
        let mut s = SparseFeatures {
            dim: x.len(),
            ..Default::default()
        };
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                s.index.push(i as u32);
                s.value.push(v);
            }
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.index.iter().map(|&i| i as usize).zip(self.value.iter().copied())
    }
}

/// Unit-interval average pooling to `pool × pool` per channel, flattened
/// channel-major.
pub fn pool_features(raster: &Raster, pool: usize) -> Result<Vec<f64>> {
    if pool == 0 || raster.height % pool != 0 || raster.width % pool != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} raster cannot be pooled to {pool}×{pool}",
            raster.height, raster.width
        )));
    }
    let (bh, bw) = (raster.height / pool, raster.width / pool);
    let norm = 1.0 / (255.0 * (bh * bw) as f64);
    let mut out = vec![0.0; raster.channels * pool * pool];
    for c in 0..raster.channels {
        let plane = raster.plane(c);
        let mut sums = vec![0u32; pool * pool];
        for v in 0..raster.height {
            let row = &plane[v * raster.width..(v + 1) * raster.width];
            let base = (v / bh) * pool;
            for (pu, chunk) in row.chunks_exact(bw).enumerate() {
                sums[base + pu] += chunk.iter().map(|&x| x as u32).sum::<u32>();
            }
        }
        for (o, s) in out[c * pool * pool..(c + 1) * pool * pool].iter_mut().zip(sums) {
            *o = s as f64 * norm;
        }
    }
    Ok(out)
}

/// All weights in one flat buffer: `w1 [F][H]`, `b1 [H]`, `w2 [O][H]`, `b2 [O]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub horizon: usize,
    pub pool: usize,
    pub data: Vec<f64>,
}

/// Intermediate values kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Per-step advance of the initial hypothesis lines, meters.
const INIT_STEP: f64 = 0.5;

impl ModelParams {
    pub fn param_count(feature_dim: usize, hidden: usize, output: usize) -> usize {
        feature_dim * hidden + hidden + output * hidden + output
    }

    pub fn zeros(feature_dim: usize, config: &ModelConfig) -> Self {
        let n = Self::param_count(feature_dim, config.hidden, config.output_dim());
        ModelParams {
            feature_dim,
            hidden: config.hidden,
            k: config.k,
            horizon: config.horizon,
            pool: config.pool,
            data: vec![0.0; n],
        }
    }

    /// Fan-in uniform weights, zero hidden bias. The mean biases start the K
    /// hypotheses as straight lines fanned over (−90°, 90°) of the agent's
    /// heading: under a near-hard posterior a hypothesis only learns from the
    /// samples it already wins, so hypotheses that start alike tend to let a
    /// single one absorb every mode.
    pub fn init(feature_dim: usize, config: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(feature_dim, config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (feature_dim as f64).sqrt();
        for w in p.w1_mut() {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = 1.0 / (config.hidden as f64).sqrt();
        for w in p.w2_mut() {
            *w = rng.random_range(-a2..a2);
        }
        let (k, t_f) = (config.k, config.horizon);
        let b2 = p.b2_mut();
        for hyp in 0..k {
            let phi = std::f64::consts::PI * ((hyp as f64 + 0.5) / k as f64 - 0.5);
            for t in 0..t_f {
                let reach = INIT_STEP * (t + 1) as f64;
                b2[(hyp * t_f + t) * 2] = reach * phi.cos();
                b2[(hyp * t_f + t) * 2 + 1] = reach * phi.sin();
            }
        }
        p
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            horizon: self.horizon,
            hidden: self.hidden,
            pool: self.pool,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.k * (2 * self.horizon + 1)
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.feature_dim * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output_dim() * self.hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, ..] = self.offsets();
        &self.data[w1..b1]
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let [w1, b1, ..] = self.offsets();
        &mut self.data[w1..b1]
    }
    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.data[b1..w2]
    }
    pub fn w2(&self) -> &[f64] {
        let [.., w2, b2] = self.offsets();
        &self.data[w2..b2]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let [.., w2, b2] = self.offsets();
        &mut self.data[w2..b2]
    }
    pub fn b2(&self) -> &[f64] {
        let [.., b2] = self.offsets();
        &self.data[b2..]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let [.., b2] = self.offsets();
        &mut self.data[b2..]
    }

    pub fn activate(&self, x: &SparseFeatures) -> Result<Activations> {
        if x.dim != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.feature_dim, x.dim
            )));
        }
        let h = self.hidden;
        let mut pre = self.b1().to_vec();
        let w1 = self.w1();
        for (f, xf) in x.iter() {
            for (p, w) in pre.iter_mut().zip(&w1[f * h..(f + 1) * h]) {
                *p += xf * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let w2 = self.w2();
        let output = self
            .b2()
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w2[o * h..(o + 1) * h], &hidden))
            .collect();
        Ok(Activations { pre, hidden, output })
    }

    pub fn split_output(&self, output: &[f64]) -> MixtureOutput {
        let n = self.k * self.horizon * 2;
        MixtureOutput {
            means: output[..n].to_vec(),
            logits: output[n..].to_vec(),
            k: self.k,
            horizon: self.horizon,
        }
    }

    pub fn forward_features(&self, x: &SparseFeatures) -> Result<MixtureOutput> {
        Ok(self.split_output(&self.activate(x)?.output))
    }

    /// Adds `scale · ∂L/∂θ` into `grads`, given `d_output = ∂L/∂output`.
    pub fn accumulate_gradient(
        &self,
        x: &SparseFeatures,
        act: &Activations,
        d_output: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> Result<()> {
        if d_output.len() != self.output_dim() || grads.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {} / buffer {} vs output {} / params {}",
                d_output.len(),
                grads.len(),
                self.output_dim(),
                self.data.len()
            )));
        }
        let h = self.hidden;
        let [w1_off, b1_off, w2_off, b2_off] = self.offsets();
        let w2 = self.w2();
        let mut d_hidden = vec![0.0; h];
        for (o, &g) in d_output.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = g * scale;
            grads[b2_off + o] += g;
            let row = &mut grads[w2_off + o * h..w2_off + (o + 1) * h];
            for (r, a) in row.iter_mut().zip(&act.hidden) {
                *r += g * a;
            }
            for (d, w) in d_hidden.iter_mut().zip(&w2[o * h..(o + 1) * h]) {
                *d += g * w;
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&act.pre)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        for (g, d) in grads[b1_off..w2_off].iter_mut().zip(&d_pre) {
            *g += d;
        }
        for (f, xf) in x.iter() {
            let row = &mut grads[w1_off + f * h..w1_off + (f + 1) * h];
            for (r, d) in row.iter_mut().zip(&d_pre) {
                *r += xf * d;
            }
        }
        Ok(())
    }

    fn check_raster(&self, raster: &Raster) -> Result<SparseFeatures> {
        let x = pool_features(raster, self.pool)?;
        if x.len() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "raster pools to {} features, model expects {}",
                x.len(),
                self.feature_dim
            )));
        }
        Ok(SparseFeatures::from_dense(&x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flattens a loss gradient into the head's output layout.
pub fn flatten_gradient(g: &NllGradient) -> Vec<f64> {
    g.d_means.iter().chain(&g.d_logits).copied().collect()
}

pub fn forward(params: &ModelParams, raster: &Raster) -> Result<MixtureOutput> {
    let x = params.check_raster(raster)?;
    params.forward_features(&x)
}

/// Parameter gradient for one raster given the loss gradient w.r.t. the
/// head's output.
pub fn backward(params: &ModelParams, raster: &Raster, d_out: &NllGradient) -> Result<Vec<f64>> {
    let x = params.check_raster(raster)?;
    backward_features(params, &x, d_out)
}

pub fn backward_features(params: &ModelParams, x: &SparseFeatures, d_out: &NllGradient) -> Result<Vec<f64>> {
    let act = params.activate(x)?;
    let mut grads = vec![0.0; params.data.len()];
    params.accumulate_gradient(x, &act, &flatten_gradient(d_out), 1.0, &mut grads)?;
    Ok(grads)
}
