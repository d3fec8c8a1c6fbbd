use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::optim::{adamw_step, cosine_warm_restart_lr, AdamState, TrainingConfig};
use super::{flatten_gradient, pool_features, ModelConfig, ModelParams, SparseFeatures};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::loss::{nll_loss, nll_loss_and_gradient, GroundTruth};
use crate::raster::dataset::list_cache_files;
use crate::raster::{read_cache_expecting, CacheEntry, RasterConfig};

/// One training example: pooled raster features and local-frame ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub features: SparseFeatures,
    pub gt: GroundTruth,
}

impl Sample {
    /// `None` when the cache has no usable ground truth (test scenes).
    pub fn from_cache(id: String, entry: &CacheEntry, pool: usize) -> Result<Option<Sample>> {
        let Some(points) = &entry.gt_future else {
            return Ok(None);
        };
        if !entry.future_valid.iter().any(|&v| v) {
            return Ok(None);
        }
        let features = SparseFeatures::from_dense(&pool_features(&entry.raster, pool)?);
        let points = points.iter().map(|p| Vec2::new(p[0] as f64, p[1] as f64)).collect();
        let gt = GroundTruth::new(points, entry.future_valid.clone())?;
        Ok(Some(Sample { id, features, gt }))
    }
}

/// Reads every cache in `dir` (sorted by name) into memory.
pub fn load_samples(dir: impl AsRef<Path>, raster: &RasterConfig, pool: usize) -> Result<Vec<Sample>> {
    let files = list_cache_files(dir)?;
    let loaded: Vec<Result<Option<Sample>>> = files
        .par_iter()
        .map(|path| {
            let entry = read_cache_expecting(path, raster)?;
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Sample::from_cache(id, &entry, pool)
        })
        .collect();
    let mut samples = Vec::with_capacity(loaded.len());
    for s in loaded {
        samples.extend(s?);
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss (the final ones when there is
    /// no validation split).
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<LogRow>,
    pub best_iter: usize,
    pub best_val_loss: Option<f64>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Seeded train/validation split over `n` items.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * n as f64).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn mean_loss(params: &ModelParams, samples: &[&Sample]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| nll_loss(&params.forward_features(&s.features)?, &s.gt))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn batch_step(params: &ModelParams, batch: &[&Sample], grads: &mut [f64]) -> Result<f64> {
    grads.fill(0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let act = params.activate(&s.features)?;
        let out = params.split_output(&act.output);
        let (loss, g) = nll_loss_and_gradient(&out, &s.gt)?;
        total += loss;
        params.accumulate_gradient(&s.features, &act, &flatten_gradient(&g), scale, grads)?;
    }
    Ok(total * scale)
}

/// Minibatch AdamW on the mixture NLL with a cosine warm-restart schedule.
/// Fully determined by `config.seed`.
pub fn train(samples: &[Sample], model: &ModelConfig, config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples with ground truth".into()));
    }
    let feature_dim = samples[0].features.dim;
    if let Some(bad) = samples
        .iter()
        .find(|s| s.features.dim != feature_dim || s.gt.len() != model.horizon)
    {
        return Err(Error::ShapeMismatch(format!(
            "sample {} has {} features / {} steps, expected {feature_dim} / {}",
            bad.id,
            bad.features.dim,
            bad.gt.len(),
            model.horizon
        )));
    }

    let (train_idx, val_idx) = split_indices(samples.len(), config.val_fraction, config.seed.wrapping_add(1));
    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();

    let mut params = ModelParams::init(feature_dim, model, config.seed);
    let mut state = AdamState::new(params.data.len());
    let mut grads = vec![0.0; params.data.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let mut log = Vec::with_capacity(config.iterations);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let batch_size = config.batch_size.min(train_set.len());
    let mut batch: Vec<&Sample> = Vec::with_capacity(batch_size);

    for iter in 0..config.iterations {
        batch.clear();
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train_set[order[cursor]]);
            cursor += 1;
        }
        let lr = cosine_warm_restart_lr(iter as u64, config);
        let train_loss = batch_step(&params, &batch, &mut grads)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        adamw_step(&mut params.data, &grads, &mut state, config, lr)?;

        let last = iter + 1 == config.iterations;
        let mut val_loss = None;
        if !val_set.is_empty() && ((iter + 1) % config.eval_every.max(1) == 0 || last) {
            let v = mean_loss(&params, &val_set)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: iter });
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, iter + 1, params.clone()));
            }
            val_loss = Some(v);
        }
        log.push(LogRow {
            iter,
            lr,
            train_loss,
            val_loss,
        });
    }

    let ids = |set: &[&Sample]| set.iter().map(|s| s.id.clone()).collect();
    let (best_val_loss, best_iter, best_params) = match best {
        Some((v, i, p)) => (Some(v), i, p),
        None => (None, config.iterations, params.clone()),
    };
    Ok(TrainOutcome {
        params: best_params,
        final_params: params,
        log,
        best_iter,
        best_val_loss,
        train_ids: ids(&train_set),
        val_ids: ids(&val_set),
    })
}

pub fn train_cache_dir(
    dir: impl AsRef<Path>,
    raster: &RasterConfig,
    model: &ModelConfig,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    let dir = dir.as_ref();
    let samples = load_samples(dir, raster, model.pool)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no cached rasters with ground truth in {}",
            dir.display()
        )));
    }
    train(&samples, model, config)
}

/// `iter,lr,train_loss,val_loss` with an empty field when validation was
/// not run at that iteration.
pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iter,lr,train_loss,val_loss\n");
    for r in rows {
        let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        out.push_str(&format!("{},{:e},{:e},{}\n", r.iter, r.lr, r.train_loss, val));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
