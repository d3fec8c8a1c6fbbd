//! Agent-centric birds-eye-view rasters.
//!
//! A raster has `3 + 2·T_h` channels stored channel-major (`[c][v][u]`):
//!
//! | channels            | content                                        |
//! |---------------------|------------------------------------------------|
//! | `0..3`              | RGB map                                         |
//! | `3..3+T_h`          | target-agent box mask per history step, oldest first |
//! | `3+T_h..3+2·T_h`    | mask of every other agent, same ordering        |
//!
//! Masks hold only 0 or 255. Boxes are filled by scanline: a pixel is set when
//! its center lies inside the oriented rectangle.

pub mod cache;
pub mod dataset;
pub mod draw;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{OrientedBox, Vec2};
use crate::scene::{AgentSnapshot, LightState, MapFeatureKind, ObjectType, Scene, HISTORY_LEN};
use crate::transform::{build_agent_frame_with, FrameTransform, DEFAULT_STATIONARY_SPEED};

pub use cache::{local_future, read_cache, read_cache_expecting, write_cache, CacheEntry, LocalFuture};
pub use dataset::{cache_file_name, rasterize_dataset, DatasetSummary};
pub use render::{render_png, render_png_annotated};

pub const MAP_CHANNELS: usize = 3;
pub const MASK_ON: u8 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    pub history_len: usize,
    /// Meters per pixel.
    pub scale: f64,
    /// `(u, v)` pixel where the target's current position lands.
    pub anchor: [f64; 2],
    pub stationary_speed: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            height: 224,
            width: 224,
            history_len: HISTORY_LEN,
            scale: 0.5,
            anchor: [61.0, 112.0],
            stationary_speed: DEFAULT_STATIONARY_SPEED,
        }
    }
}

impl RasterConfig {
    pub fn channels(&self) -> usize {
        MAP_CHANNELS + 2 * self.history_len
    }

    pub fn anchor_pixel(&self) -> Vec2 {
        Vec2::from(self.anchor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("raster size must be positive".into()));
        }
        if self.history_len == 0 || self.history_len > HISTORY_LEN {
            return Err(Error::InvalidConfig(format!(
                "history_len must be in 1..={HISTORY_LEN}, got {}",
                self.history_len
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub scene_id: String,
    pub agent_id: String,
    pub object_type: ObjectType,
    pub config: RasterConfig,
    /// Free-form provenance (e.g. the resolved pipeline config).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub frame: FrameTransform,
    pub meta: RasterMeta,
}

impl Raster {
    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [u8] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, v: usize, u: usize) -> u8 {
        self.data[(c * self.height + v) * self.width + u]
    }

    pub fn history_len(&self) -> usize {
        (self.channels - MAP_CHANNELS) / 2
    }

    pub fn target_channel(&self, t: usize) -> usize {
        MAP_CHANNELS + t
    }

    pub fn others_channel(&self, t: usize) -> usize {
        MAP_CHANNELS + self.history_len() + t
    }

    /// Mean `(u, v)` of the set pixels of a channel, if any.
    pub fn mask_centroid(&self, c: usize) -> Option<Vec2> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for (i, &x) in self.plane(c).iter().enumerate() {
            if x != 0 {
                su += (i % self.width) as f64;
                sv += (i / self.width) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| Vec2::new(su / n as f64, sv / n as f64))
    }
}

/// Fixed map palette (RGB). Background is black.
pub mod palette {
    use super::*;

    pub const BACKGROUND: [u8; 3] = [0, 0, 0];
    pub const LANE_CENTER: [u8; 3] = [0, 90, 255];
    pub const ROAD_LINE: [u8; 3] = [128, 128, 128];
    pub const ROAD_EDGE: [u8; 3] = [255, 255, 255];
    pub const CROSSWALK: [u8; 3] = [255, 255, 0];
    pub const STOP_SIGN: [u8; 3] = [255, 0, 255];

    pub fn light(state: Option<LightState>) -> [u8; 3] {
        match state {
            Some(LightState::Red) => [255, 0, 0],
            Some(LightState::Yellow) => [255, 165, 0],
            Some(LightState::Green) => [0, 255, 0],
            Some(LightState::Unknown) | None => [160, 0, 160],
        }
    }

    pub fn color(kind: MapFeatureKind, state: Option<LightState>) -> [u8; 3] {
        match kind {
            MapFeatureKind::LaneCenter => LANE_CENTER,
            MapFeatureKind::RoadLine => ROAD_LINE,
            MapFeatureKind::RoadEdge => ROAD_EDGE,
            MapFeatureKind::Crosswalk => CROSSWALK,
            MapFeatureKind::StopSign => STOP_SIGN,
            MapFeatureKind::TrafficLightLane => light(state),
        }
    }

    /// Later kinds paint over earlier ones.
    pub const DRAW_ORDER: [MapFeatureKind; 6] = [
        MapFeatureKind::Crosswalk,
        MapFeatureKind::LaneCenter,
        MapFeatureKind::RoadLine,
        MapFeatureKind::RoadEdge,
        MapFeatureKind::TrafficLightLane,
        MapFeatureKind::StopSign,
    ];
}

fn draw_map(scene: &Scene, frame: &FrameTransform, w: usize, h: usize, data: &mut [u8]) {
    let n = w * h;
    let (map, _) = data.split_at_mut(MAP_CHANNELS * n);
    let mut put = |u: usize, v: usize, rgb: [u8; 3]| {
        for (c, value) in rgb.into_iter().enumerate() {
            map[c * n + v * w + u] = value;
        }
    };
    let mut pixels = Vec::new();
    for kind in palette::DRAW_ORDER {
        for feature in scene.map_features.iter().filter(|f| f.kind == kind) {
            let rgb = palette::color(kind, feature.light_state);
            pixels.clear();
            pixels.extend(feature.polyline.iter().map(|&p| frame.world_to_pixel(p)));
            match kind {
                MapFeatureKind::Crosswalk => {
                    draw::polygon_spans(&pixels, w, h, |v, u0, u1| {
                        for u in u0..u1 {
                            put(u, v, rgb);
                        }
                    });
                    // keep degenerate (two-point) crosswalks visible
                    draw::polyline_pixels(&pixels, w, h, |u, v| put(u, v, rgb));
                }
                MapFeatureKind::StopSign => {
                    for &p in &pixels {
                        draw::marker_pixels(p, 1, w, h, |u, v| put(u, v, rgb));
                    }
                }
                _ => draw::polyline_pixels(&pixels, w, h, |u, v| put(u, v, rgb)),
            }
        }
    }
}

fn draw_box(snapshot: &AgentSnapshot, frame: &FrameTransform, w: usize, h: usize, plane: &mut [u8]) {
    if !snapshot.valid {
        return;
    }
    let corners = OrientedBox::new(snapshot.position, snapshot.heading, snapshot.length, snapshot.width)
        .corners()
        .map(|p| frame.world_to_pixel(p));
    draw::fill_polygon(plane, w, h, &corners, MASK_ON);
}

/// Renders the multi-channel raster for one prediction target of a scene.
pub fn rasterize(scene: &Scene, target_id: &str, config: &RasterConfig) -> Result<Raster> {
    config.validate()?;
    let target = scene.track(target_id).ok_or_else(|| Error::UnknownAgent {
        scene_id: scene.scene_id.clone(),
        agent_id: target_id.to_string(),
    })?;
    if !target.is_prediction_target {
        return Err(Error::NotATarget {
            scene_id: scene.scene_id.clone(),
            agent_id: target_id.to_string(),
        });
    }
    let current = target
        .current()
        .filter(|c| c.valid)
        .ok_or_else(|| Error::DegenerateFrame(format!("target `{target_id}` has no valid current snapshot")))?;
    let frame = build_agent_frame_with(current, config.scale, config.anchor_pixel(), config.stationary_speed)?;

    let (w, h, th) = (config.width, config.height, config.history_len);
    let channels = config.channels();
    let n = w * h;
    let mut data = vec![0u8; channels * n];
    draw_map(scene, &frame, w, h, &mut data);

    for track in &scene.tracks {
        if track.history.len() < th {
            return Err(Error::InvalidConfig(format!(
                "track `{}` has {} history snapshots, raster needs {th}",
                track.agent_id,
                track.history.len()
            )));
        }
        let offset = track.history.len() - th;
        let block = if track.agent_id == target.agent_id {
            MAP_CHANNELS
        } else {
            MAP_CHANNELS + th
        };
        for (t, snapshot) in track.history[offset..].iter().enumerate() {
            let c = block + t;
            draw_box(snapshot, &frame, w, h, &mut data[c * n..(c + 1) * n]);
        }
    }

    Ok(Raster {
        channels,
        height: h,
        width: w,
        data,
        frame,
        meta: RasterMeta {
            scene_id: scene.scene_id.clone(),
            agent_id: target.agent_id.clone(),
            object_type: target.object_type,
            config: config.clone(),
            extra: None,
        },
    })
}
