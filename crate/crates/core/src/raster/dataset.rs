use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{local_future, rasterize, write_cache, RasterConfig};
use crate::error::{Error, Result};
use crate::scene::Scene;

#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub failures: Vec<String>,
    pub seconds: f64,
    pub rasters_per_sec: f64,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn cache_file_name(scene_id: &str, agent_id: &str) -> String {
    format!("{}__{}.npz", sanitize(scene_id), sanitize(agent_id))
}

/// Rasterizes every prediction target of every scene into `out_dir`, one NPZ
/// per (scene, target). Per-item failures are collected, not fatal.
pub fn rasterize_dataset(
    scenes: &[Scene],
    out_dir: impl AsRef<Path>,
    config: &RasterConfig,
    workers: usize,
    extra_meta: Option<&serde_json::Value>,
) -> Result<DatasetSummary> {
    let out_dir = out_dir.as_ref();
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(&Scene, &str)> = scenes
        .iter()
        .flat_map(|s| s.targets().map(move |t| (s, t.agent_id.as_str())))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let run_one = |&(scene, agent_id): &(&Scene, &str)| -> Result<PathBuf> {
        let mut raster = rasterize(scene, agent_id, config)?;
        raster.meta.extra = extra_meta.cloned();
        let track = scene.track(agent_id).expect("target exists");
        let future = local_future(track, &raster.frame);
        let path = out_dir.join(cache_file_name(&scene.scene_id, agent_id));
        write_cache(&raster, future.as_ref(), &path)?;
        Ok(path)
    };

    let start = Instant::now();
    let results: Vec<Result<PathBuf>> = pool.install(|| jobs.par_iter().map(run_one).collect());
    let seconds = start.elapsed().as_secs_f64();

    let mut count = 0;
    let mut failures = Vec::new();
    for ((scene, agent), r) in jobs.iter().zip(results) {
        match r {
            Ok(_) => count += 1,
            Err(e) => failures.push(format!("{}/{agent}: {e}", scene.scene_id)),
        }
    }
    Ok(DatasetSummary {
        count,
        failures,
        seconds,
        rasters_per_sec: if seconds > 0.0 {
            count as f64 / seconds
        } else {
            f64::INFINITY
        },
    })
}

/// Sorted list of `*.npz` files in a directory.
pub fn list_cache_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "npz"))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(cache_file_name("s/1", "a b"), "s_1__a_b.npz");
    }
}
