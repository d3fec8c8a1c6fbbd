//! Agent-centric SE(2) frames and the world ↔ pixel mapping.
//!
//! The local frame has its origin at the target's current position with +x
//! along the direction of motion and +y to its left. Pixels are `(u, v)` =
//! `(column, row)` with `v` growing downward, so a point one meter to the left
//! of the target lands `1 / scale` pixels *above* the anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scene::AgentSnapshot;

/// Below this speed (m/s) the heading replaces the velocity direction.
pub const DEFAULT_STATIONARY_SPEED: f64 = 0.1;

/// `local = R(rotation) · world + translation`, then
/// `pixel = anchor + (local.x, -local.y) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub rotation: f64,
    pub translation: Vec2,
    pub scale: f64,
    pub anchor_pixel: Vec2,
}

impl FrameTransform {
    pub fn world_to_local(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.translation
    }

    pub fn local_to_world(&self, q: Vec2) -> Vec2 {
        (q - self.translation).rotate(-self.rotation)
    }

    pub fn local_to_pixel(&self, q: Vec2) -> Vec2 {
        Vec2::new(
            self.anchor_pixel.x + q.x / self.scale,
            self.anchor_pixel.y - q.y / self.scale,
        )
    }

    pub fn pixel_to_local(&self, px: Vec2) -> Vec2 {
        Vec2::new(
            (px.x - self.anchor_pixel.x) * self.scale,
            (self.anchor_pixel.y - px.y) * self.scale,
        )
    }

    pub fn world_to_pixel(&self, p: Vec2) -> Vec2 {
        self.local_to_pixel(self.world_to_local(p))
    }

    pub fn pixel_to_world(&self, px: Vec2) -> Vec2 {
        self.local_to_world(self.pixel_to_local(px))
    }

    /// Rotates a world-frame direction (velocity, displacement) into the
    /// local frame.
    pub fn rotate_to_local(&self, d: Vec2) -> Vec2 {
        d.rotate(self.rotation)
    }

    /// Heading of a world-frame angle expressed in the local frame.
    pub fn heading_to_local(&self, heading: f64) -> f64 {
        heading + self.rotation
    }

    /// The target's world position, i.e. the preimage of the anchor.
    pub fn origin(&self) -> Vec2 {
        self.local_to_world(Vec2::ZERO)
    }

    /// `[rotation, tx, ty, scale, anchor_u, anchor_v]`, the cache layout.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation,
            self.translation.x,
            self.translation.y,
            self.scale,
            self.anchor_pixel.x,
            self.anchor_pixel.y,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        FrameTransform {
            rotation: a[0],
            translation: Vec2::new(a[1], a[2]),
            scale: a[3],
            anchor_pixel: Vec2::new(a[4], a[5]),
        }
    }
}

/// Direction the local +x axis points to in the world, for a given snapshot.
pub fn motion_direction(current: &AgentSnapshot, stationary_speed: f64) -> Result<f64> {
    let speed = current.velocity.norm();
    if speed >= stationary_speed && speed.is_finite() {
        Ok(current.velocity.angle())
    } else if current.heading.is_finite() {
        Ok(current.heading)
    } else {
        Err(Error::DegenerateFrame(format!(
            "speed {speed} below {stationary_speed} m/s and heading is non-finite"
        )))
    }
}

pub fn build_agent_frame(target_current: &AgentSnapshot, scale: f64, anchor_pixel: Vec2) -> Result<FrameTransform> {
    build_agent_frame_with(target_current, scale, anchor_pixel, DEFAULT_STATIONARY_SPEED)
}

pub fn build_agent_frame_with(
    target_current: &AgentSnapshot,
    scale: f64,
    anchor_pixel: Vec2,
    stationary_speed: f64,
) -> Result<FrameTransform> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateFrame(format!("scale must be > 0, got {scale}")));
    }
    if !target_current.position.is_finite() {
        return Err(Error::DegenerateFrame("non-finite target position".into()));
    }
    let rotation = -motion_direction(target_current, stationary_speed)?;
    let translation = -target_current.position.rotate(rotation);
    Ok(FrameTransform {
        rotation,
        translation,
        scale,
        anchor_pixel,
    })
}
