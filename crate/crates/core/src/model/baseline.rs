use crate::error::{Error, Result};
use crate::loss::MixtureOutput;
use crate::scene::{Track, FUTURE_LEN, TIMESTEP};
use crate::transform::{build_agent_frame, FrameTransform};

/// Extrapolates the current velocity for `FUTURE_LEN` steps in the target's
/// local frame. All K hypotheses are identical and equally confident.
pub fn constant_velocity_predict(track: &Track, k: usize) -> Result<MixtureOutput> {
    let current = track
        .current()
        .filter(|c| c.valid)
        .ok_or_else(|| Error::DegenerateFrame(format!("track `{}` has no valid current snapshot", track.agent_id)))?;
    let frame = build_agent_frame(current, 1.0, Default::default())?;
    constant_velocity_in_frame(&frame, current.velocity, k, FUTURE_LEN)
}

pub fn constant_velocity_in_frame(
    frame: &FrameTransform,
    world_velocity: crate::geom::Vec2,
    k: usize,
    horizon: usize,
) -> Result<MixtureOutput> {
    let v = if world_velocity.is_finite() {
        frame.rotate_to_local(world_velocity)
    } else {
        Default::default()
    };
    let mut one = Vec::with_capacity(horizon * 2);
    for t in 1..=horizon {
        let dt = t as f64 * TIMESTEP;
        one.extend([v.x * dt, v.y * dt]);
    }
    MixtureOutput::new(one.repeat(k), vec![0.0; k], k, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::scene::fixtures::{snapshot, straight_track};

    #[test]
    fn ten_meters_per_second_reaches_eighty() {
        let mut track = straight_track("a", true);
        *track.history.last_mut().unwrap() = snapshot(7.0, -3.0, 0.0, -10.0);
        let out = constant_velocity_predict(&track, 1).unwrap();
        assert!((out.mean(0, 0) - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((out.mean(0, 79) - Vec2::new(80.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn stationary_stays_at_origin() {
        let mut track = straight_track("a", true);
        *track.history.last_mut().unwrap() = snapshot(1.0, 1.0, 0.0, 0.0);
        let out = constant_velocity_predict(&track, 3).unwrap();
        assert!(out.means.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn k_copies_with_uniform_confidence() {
        let out = constant_velocity_predict(&straight_track("a", true), 6).unwrap();
        for k in 1..6 {
            assert_eq!(out.trajectory(k), out.trajectory(0));
        }
        assert!(out.confidences().iter().all(|c| (c - 1.0 / 6.0).abs() < 1e-15));
    }
}
