//! Predictions file I/O and the per-type report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{average_precision_ranked, EvaluationSample, MetricsConfig, MAX_HYPOTHESES};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::loss::GroundTruth;
use crate::scene::{AgentSnapshot, ObjectType, Scene, FUTURE_LEN};

/// One line of the predictions file: K world-frame trajectories of 80
/// points and their confidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub agent_id: String,
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub confidences: Vec<f64>,
}

#[derive(Deserialize)]
struct HeaderLine {
    header: Value,
}

/// Writes JSON lines; `header`, when given, becomes a leading
/// `{"header": …}` line.
pub fn write_predictions(path: impl AsRef<Path>, header: Option<&Value>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    if let Some(h) = header {
        serde_json::to_writer(&mut out, &serde_json::json!({ "header": h })).expect("json");
        out.push(b'\n');
    }
    for r in records {
        serde_json::to_writer(&mut out, r).expect("json");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Option<Value>, Vec<PredictionRecord>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            scene_id: format!("{}:{}", path.display(), n + 1),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

/// One row of the report; metric fields are `None` when the row has no
/// samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub count: usize,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(rename = "minADE")]
    pub min_ade: Option<f64>,
    #[serde(rename = "minFDE")]
    pub min_fde: Option<f64>,
    pub miss_rate: Option<f64>,
    pub overlap_rate: Option<f64>,
}

/// Rows Vehicle, Pedestrian, Cyclist, then Avg: the unweighted mean over
/// the types that have samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub miss_threshold: f64,
    #[serde(default)]
    pub config: Option<Value>,
}

struct PerSample {
    min_ade: f64,
    min_fde: f64,
    miss: bool,
    overlap: bool,
    top_conf: f64,
    top_hit: bool,
}

fn score(sample: &EvaluationSample, threshold: f64) -> Result<PerSample> {
    let min_fde = sample.min_fde()?;
    Ok(PerSample {
        min_ade: sample.min_ade()?,
        min_fde,
        miss: min_fde > threshold,
        overlap: sample.overlaps(),
        top_conf: sample.confidences[sample.top_hypothesis()],
        top_hit: sample.top_is_hit(threshold)?,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

impl MetricsReport {
    /// Aggregates samples that are already at evaluation resolution.
    pub fn from_samples(samples: &[EvaluationSample], config: &MetricsConfig) -> Result<Self> {
        let scored: Vec<PerSample> = samples
            .par_iter()
            .map(|s| score(s, config.miss_threshold))
            .collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(4);
        for ty in ObjectType::ALL {
            let sel: Vec<&PerSample> = samples
                .iter()
                .zip(&scored)
                .filter(|(s, _)| s.object_type == ty)
                .map(|(_, p)| p)
                .collect();
            let row = if sel.is_empty() {
                MetricsRow {
                    label: ty.to_string(),
                    count: 0,
                    map: None,
                    min_ade: None,
                    min_fde: None,
                    miss_rate: None,
                    overlap_rate: None,
                }
            } else {
                let ranked: Vec<(f64, bool)> = sel.iter().map(|p| (p.top_conf, p.top_hit)).collect();
                MetricsRow {
                    label: ty.to_string(),
                    count: sel.len(),
                    map: Some(average_precision_ranked(&ranked)?),
                    min_ade: Some(mean(sel.iter().map(|p| p.min_ade))),
                    min_fde: Some(mean(sel.iter().map(|p| p.min_fde))),
                    miss_rate: Some(mean(sel.iter().map(|p| p.miss as u8 as f64))),
                    overlap_rate: Some(mean(sel.iter().map(|p| p.overlap as u8 as f64))),
                }
            };
            rows.push(row);
        }
        let present: Vec<&MetricsRow> = rows.iter().filter(|r| r.count > 0).collect();
        if present.is_empty() {
            return Err(Error::EmptySet);
        }
        let avg = |f: fn(&MetricsRow) -> Option<f64>| Some(mean(present.iter().filter_map(|r| f(r))));
        let avg_row = MetricsRow {
            label: "Avg".into(),
            count: present.iter().map(|r| r.count).sum(),
            map: avg(|r| r.map),
            min_ade: avg(|r| r.min_ade),
            min_fde: avg(|r| r.min_fde),
            miss_rate: avg(|r| r.miss_rate),
            overlap_rate: avg(|r| r.overlap_rate),
        };
        rows.push(avg_row);
        Ok(MetricsReport {
            rows,
            miss_threshold: config.miss_threshold,
            config: None,
        })
    }

    pub fn row(&self, label: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("type,count,mAP,minADE,minFDE,miss_rate,overlap_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label,
                r.count,
                cell(r.map),
                cell(r.min_ade),
                cell(r.min_fde),
                cell(r.miss_rate),
                cell(r.overlap_rate)
            ));
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        for (ext, body) in [("json", self.to_json()), ("csv", self.to_csv())] {
            let path = stem.with_extension(ext);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn to_points(xs: &[[f64; 2]]) -> Vec<Vec2> {
    xs.iter().map(|&p| Vec2::from(p)).collect()
}

/// Matches predictions to scene targets, subsamples to 2 Hz, and scores.
/// Targets without a ground-truth future are not scored.
pub fn evaluate(predictions: &[PredictionRecord], scenes: &[Scene], config: &MetricsConfig) -> Result<MetricsReport> {
    let mut by_key: BTreeMap<(&str, &str), &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        by_key.insert((p.scene_id.as_str(), p.agent_id.as_str()), p);
    }
    let mut known = BTreeSet::new();
    let mut samples = Vec::new();
    for scene in scenes {
        for target in scene.targets() {
            known.insert((scene.scene_id.as_str(), target.agent_id.as_str()));
            let Some(future) = &target.future else { continue };
            if !future.iter().any(|s| s.valid) {
                continue;
            }
            let pred = by_key
                .get(&(scene.scene_id.as_str(), target.agent_id.as_str()))
                .ok_or_else(|| Error::MissingPrediction {
                    scene_id: scene.scene_id.clone(),
                    agent_id: target.agent_id.clone(),
                })?;
            let k = pred.trajectories.len();
            if k == 0 || k > MAX_HYPOTHESES || pred.confidences.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "{}/{}: {k} trajectories with {} confidences (1..={MAX_HYPOTHESES} allowed)",
                    scene.scene_id,
                    target.agent_id,
                    pred.confidences.len()
                )));
            }
            if let Some(t) = pred.trajectories.iter().find(|t| t.len() != FUTURE_LEN) {
                return Err(Error::ShapeMismatch(format!(
                    "{}/{}: trajectory has {} points, expected {FUTURE_LEN}",
                    scene.scene_id,
                    target.agent_id,
                    t.len()
                )));
            }
            let gt = GroundTruth::new(
                future.iter().map(|s| s.position).collect(),
                future.iter().map(|s| s.valid && s.position.is_finite()).collect(),
            )?;
            let others: Vec<Vec<AgentSnapshot>> = scene
                .tracks
                .iter()
                .filter(|t| t.agent_id != target.agent_id)
                .filter_map(|t| t.future.clone())
                .filter(|f| f.len() == FUTURE_LEN)
                .collect();
            let current = *target.current().ok_or_else(|| Error::Invariant {
                scene_id: scene.scene_id.clone(),
                field: format!("tracks[{}].history", target.agent_id),
                message: "empty history".into(),
            })?;
            let sample = EvaluationSample {
                object_type: target.object_type,
                trajectories: pred.trajectories.iter().map(|t| to_points(t)).collect(),
                confidences: pred.confidences.clone(),
                gt,
                current,
                others,
            };
            let sub = sample.subsampled()?;
            // a target whose 2 Hz points are all missing cannot be scored
            if sub.gt.valid.iter().any(|&v| v) {
                samples.push(sub);
            }
        }
    }
    if let Some(p) = predictions
        .iter()
        .find(|p| !known.contains(&(p.scene_id.as_str(), p.agent_id.as_str())))
    {
        return Err(Error::UnknownTarget {
            scene_id: p.scene_id.clone(),
            agent_id: p.agent_id.clone(),
        });
    }
    MetricsReport::from_samples(&samples, config)
}
