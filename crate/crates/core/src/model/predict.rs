use rayon::prelude::*;

use super::{forward, ModelParams};
use crate::error::Result;
use crate::loss::{softmax_confidences, MixtureOutput};
use crate::metrics::PredictionRecord;
use crate::raster::{rasterize, RasterConfig};
use crate::scene::Scene;
use crate::transform::FrameTransform;

/// Maps local-frame hypotheses back to world coordinates.
pub fn to_world_record(
    scene_id: &str,
    agent_id: &str,
    out: &MixtureOutput,
    frame: &FrameTransform,
) -> PredictionRecord {
    PredictionRecord {
        scene_id: scene_id.into(),
        agent_id: agent_id.into(),
        trajectories: (0..out.k)
            .map(|k| {
                out.trajectory(k)
                    .into_iter()
                    .map(|q| frame.local_to_world(q).into())
                    .collect()
            })
            .collect(),
        confidences: softmax_confidences(&out.logits),
    }
}

/// Rasterizes every prediction target and runs the model, in scene order.
pub fn predict_scenes(params: &ModelParams, scenes: &[Scene], raster: &RasterConfig) -> Result<Vec<PredictionRecord>> {
    let jobs: Vec<(&Scene, &str)> = scenes
        .iter()
        .flat_map(|s| s.targets().map(move |t| (s, t.agent_id.as_str())))
        .collect();
    jobs.par_iter()
        .map(|&(scene, agent)| {
            let r = rasterize(scene, agent, raster)?;
            let out = forward(params, &r)?;
            Ok(to_world_record(&scene.scene_id, agent, &out, &r.frame))
        })
        .collect()
}
