//! Displacement metrics, miss rate, a simplified trajectory mAP, and the
//! overlap rate, aggregated per object type.
//!
//! Conventions:
//! - ADE is the mean over valid steps of the per-step Euclidean error.
//! - FDE uses the last valid step.
//! - Evaluation runs on the 2 Hz subsample: indices 4, 9, …, 79 of the 10 Hz
//!   future, i.e. 0.5 s … 8.0 s.
//! - A sample is a miss when every hypothesis ends more than
//!   `miss_threshold` meters from the ground truth.
//! - mAP ranks each sample's most confident hypothesis by confidence; it is a
//!   true positive when that hypothesis ends within the miss threshold. AP is
//!   `Σ (R_n − R_{n−1})·P_n`, averaged over the object types present.
//! - Overlap flags a sample when the most confident hypothesis, swept with the
//!   target's current extent, intersects any other agent's ground-truth box at
//!   a common timestep.

pub mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{OrientedBox, Vec2};
use crate::loss::{softmax_confidences, GroundTruth, MixtureOutput};
use crate::scene::{AgentSnapshot, ObjectType};

pub use report::{evaluate, read_predictions, write_predictions, MetricsReport, MetricsRow, PredictionRecord};

/// Every 5th step of a 10 Hz, 80-step future, ending at 8 s.
pub const SUBSAMPLE_INDICES: [usize; 16] = [4, 9, 14, 19, 24, 29, 34, 39, 44, 49, 54, 59, 64, 69, 74, 79];
pub const MAX_HYPOTHESES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub miss_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { miss_threshold: 2.0 }
    }
}

pub fn subsample_2hz<T: Copy>(seq: &[T]) -> Result<Vec<T>> {
    if seq.len() != 80 {
        return Err(Error::ShapeMismatch(format!(
            "2 Hz subsampling needs 80 steps, got {}",
            seq.len()
        )));
    }
    Ok(SUBSAMPLE_INDICES.iter().map(|&i| seq[i]).collect())
}

fn check_lengths(pred: &[Vec2], gt: &[Vec2], valid: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || gt.len() != valid.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} / ground truth {} / mask {}",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    Ok(())
}

pub fn ade(pred: &[Vec2], gt: &[Vec2], valid: &[bool]) -> Result<f64> {
    check_lengths(pred, gt, valid)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, g), &v) in pred.iter().zip(gt).zip(valid) {
        if v {
            sum += p.distance(*g);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidSteps);
    }
    Ok(sum / n as f64)
}

pub fn fde(pred: &[Vec2], gt: &[Vec2], valid: &[bool]) -> Result<f64> {
    check_lengths(pred, gt, valid)?;
    let last = valid.iter().rposition(|&v| v).ok_or(Error::NoValidSteps)?;
    Ok(pred[last].distance(gt[last]))
}

fn min_over(hypotheses: &[Vec<Vec2>], f: impl Fn(&[Vec2]) -> Result<f64>) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::ShapeMismatch("need at least one hypothesis".into()));
    }
    hypotheses
        .iter()
        .map(|h| f(h))
        .try_fold(f64::INFINITY, |best, x| x.map(|x| best.min(x)))
}

pub fn min_ade(hypotheses: &[Vec<Vec2>], gt: &[Vec2], valid: &[bool]) -> Result<f64> {
    min_over(hypotheses, |h| ade(h, gt, valid))
}

pub fn min_fde(hypotheses: &[Vec<Vec2>], gt: &[Vec2], valid: &[bool]) -> Result<f64> {
    min_over(hypotheses, |h| fde(h, gt, valid))
}

/// A scored prediction for one target, in a single consistent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSample {
    pub object_type: ObjectType,
    pub trajectories: Vec<Vec<Vec2>>,
    pub confidences: Vec<f64>,
    pub gt: GroundTruth,
    /// Target state at prediction time (position, heading, extent).
    pub current: AgentSnapshot,
    /// Ground-truth futures of the other agents, aligned with `gt`.
    pub others: Vec<Vec<AgentSnapshot>>,
}

impl EvaluationSample {
    pub fn from_mixture(
        object_type: ObjectType,
        prediction: &MixtureOutput,
        gt: GroundTruth,
        current: AgentSnapshot,
        others: Vec<Vec<AgentSnapshot>>,
    ) -> Self {
        EvaluationSample {
            object_type,
            trajectories: (0..prediction.k).map(|k| prediction.trajectory(k)).collect(),
            confidences: softmax_confidences(&prediction.logits),
            gt,
            current,
            others,
        }
    }

    /// The same sample restricted to the 2 Hz evaluation steps.
    pub fn subsampled(&self) -> Result<Self> {
        Ok(EvaluationSample {
            object_type: self.object_type,
            trajectories: self
                .trajectories
                .iter()
                .map(|t| subsample_2hz(t))
                .collect::<Result<_>>()?,
            confidences: self.confidences.clone(),
            gt: GroundTruth::new(subsample_2hz(&self.gt.points)?, subsample_2hz(&self.gt.valid)?)?,
            current: self.current,
            others: self.others.iter().map(|o| subsample_2hz(o)).collect::<Result<_>>()?,
        })
    }

    pub fn min_ade(&self) -> Result<f64> {
        min_ade(&self.trajectories, &self.gt.points, &self.gt.valid)
    }

    pub fn min_fde(&self) -> Result<f64> {
        min_fde(&self.trajectories, &self.gt.points, &self.gt.valid)
    }

    /// Index of the most confident hypothesis; ties go to the lowest index.
    pub fn top_hypothesis(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.confidences.iter().enumerate() {
            if c > self.confidences[best] {
                best = k;
            }
        }
        best
    }

    pub fn is_miss(&self, threshold: f64) -> Result<bool> {
        Ok(self.min_fde()? > threshold)
    }

    /// Whether the most confident hypothesis ends within the threshold.
    pub fn top_is_hit(&self, threshold: f64) -> Result<bool> {
        let top = &self.trajectories[self.top_hypothesis()];
        Ok(fde(top, &self.gt.points, &self.gt.valid)? <= threshold)
    }

    /// Whether the most confident hypothesis collides with any other agent.
    pub fn overlaps(&self) -> bool {
        let traj = &self.trajectories[self.top_hypothesis()];
        let (length, width) = (self.current.length, self.current.width);
        let mut prev = self.current.position;
        let mut heading = self.current.heading;
        for (t, &p) in traj.iter().enumerate() {
            let step = p - prev;
            if step.norm() > 1e-6 {
                heading = step.angle();
            }
            prev = p;
            let ours = OrientedBox::new(p, heading, length, width);
            let hit = self.others.iter().any(|other| {
                other.get(t).is_some_and(|s| {
                    s.valid && ours.intersects(&OrientedBox::new(s.position, s.heading, s.length, s.width))
                })
            });
            if hit {
                return true;
            }
        }
        false
    }
}

pub fn miss_rate(samples: &[EvaluationSample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut misses = 0usize;
    for s in samples {
        misses += s.is_miss(threshold)? as usize;
    }
    Ok(misses as f64 / samples.len() as f64)
}

pub fn overlap_rate(samples: &[EvaluationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let flagged = samples.iter().filter(|s| s.overlaps()).count();
    Ok(flagged as f64 / samples.len() as f64)
}

/// AP over `(confidence, is_true_positive)` pairs, one per ground-truth
/// object, ranked by descending confidence (stable for ties).
pub fn average_precision_ranked(items: &[(f64, bool)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].0.total_cmp(&items[a].0));
    let total = items.len() as f64;
    let (mut tp, mut prev_recall, mut ap) = (0usize, 0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if items[i].1 {
            tp += 1;
            let recall = tp as f64 / total;
            let precision = tp as f64 / (rank + 1) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// Per-type AP, then the unweighted mean over the types present.
pub fn average_precision(samples: &[EvaluationSample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut aps = Vec::new();
    for ty in ObjectType::ALL {
        let items: Vec<(f64, bool)> = samples
            .iter()
            .filter(|s| s.object_type == ty)
            .map(|s| Ok((s.confidences[s.top_hypothesis()], s.top_is_hit(threshold)?)))
            .collect::<Result<_>>()?;
        if !items.is_empty() {
            aps.push(average_precision_ranked(&items)?);
        }
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
