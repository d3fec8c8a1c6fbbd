//! Synthetic driving scenes: a straight two-lane road, or a T-junction where
//! the target either continues straight or turns left with probability `p`.
//!
//! Scenes are built in a canonical frame (target at the origin heading +x at
//! the current step) and then placed at a random world pose. Scene `i` draws
//! from its own stream seeded with `seed + i`, so generation is parallel and
//! bit-exact across runs.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::scene::{
    AgentSnapshot, LightState, MapFeature, MapFeatureKind, ObjectType, Scene, Track, FUTURE_LEN, HISTORY_LEN, TIMESTEP,
};

const LANE_WIDTH: f64 = 3.5;
const ROAD_HALF_LENGTH: f64 = 150.0;
const SIDE_ROAD_LENGTH: f64 = 120.0;
const VEHICLE_LENGTH: f64 = 4.5;
const VEHICLE_WIDTH: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    StraightRoad,
    TIntersection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Probability that a T-junction future turns.
    pub branch_probability: f64,
    /// Target speed in m/s, drawn uniformly per scene; equal bounds fix it.
    pub speed_range: [f64; 2],
    /// Distance in meters from the target's current position to the centre
    /// of the side road, drawn uniformly per scene.
    pub junction_distance: [f64; 2],
    pub arc_radius: f64,
    /// Standard deviation of the world-frame positional jitter, meters.
    pub noise_sigma: f64,
    /// Other vehicles in the oncoming lane: 0..=max_other_agents per scene.
    pub max_other_agents: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::TIntersection,
            branch_probability: 0.5,
            speed_range: [8.0, 12.0],
            junction_distance: [15.0, 30.0],
            arc_radius: 8.0,
            noise_sigma: 0.1,
            max_other_agents: 2,
            count: 100,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.branch_probability) {
            return bad(format!("branch_probability {} outside [0, 1]", self.branch_probability));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        let [lo, hi] = self.speed_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("speed_range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
        }
        if !(self.arc_radius > 0.0 && self.arc_radius.is_finite()) {
            return bad(format!("arc_radius {} must be positive", self.arc_radius));
        }
        let [dlo, dhi] = self.junction_distance;
        if !(dlo >= self.arc_radius && dlo <= dhi && dhi.is_finite()) {
            return bad(format!(
                "junction_distance [{dlo}, {dhi}] must satisfy arc_radius <= lo <= hi"
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FutureMode {
    Straight,
    Turn,
}

/// A generated scene together with the mode its target's future follows.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub scene: Scene,
    pub mode: FutureMode,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Vec<Scene>> {
    Ok(generate_labeled(spec)?.into_iter().map(|l| l.scene).collect())
}

pub fn generate_labeled(spec: &ScenarioSpec) -> Result<Vec<LabeledScene>> {
    spec.validate()?;
    Ok((0..spec.count).into_par_iter().map(|i| generate_one(spec, i)).collect())
}

/// Pose along a path that runs straight to `x = d − r`, then follows a left
/// quarter circle of radius `r` into the side road at `x = d`.
fn turning_path(s: f64, d: f64, r: f64) -> (Vec2, f64) {
    let straight = d - r;
    let arc = FRAC_PI_2 * r;
    if s <= straight {
        (Vec2::new(s, 0.0), 0.0)
    } else if s <= straight + arc {
        let phi = (s - straight) / r;
        (Vec2::new(straight + r * phi.sin(), r - r * phi.cos()), phi)
    } else {
        (Vec2::new(d, r + (s - straight - arc)), FRAC_PI_2)
    }
}

struct Placement {
    rotation: f64,
    offset: Vec2,
}

impl Placement {
    fn point(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.offset
    }
}

fn generate_one(spec: &ScenarioSpec, index: usize) -> LabeledScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));
    let turns = spec.kind == ScenarioKind::TIntersection && rng.random_bool(spec.branch_probability);
    let speed = uniform(&mut rng, spec.speed_range);
    let d = uniform(&mut rng, spec.junction_distance);
    let r = spec.arc_radius;
    let place = Placement {
        rotation: rng.random_range(-PI..PI),
        offset: Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)),
    };
    let jitter = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let noise = |rng: &mut ChaCha8Rng| Vec2::new(jitter.sample(rng), jitter.sample(rng));

    let snap = |rng: &mut ChaCha8Rng, p: Vec2, heading: f64, speed: f64| AgentSnapshot {
        position: place.point(p) + noise(rng),
        velocity: Vec2::from_angle(heading + place.rotation) * speed,
        heading: wrap_angle(heading + place.rotation),
        length: VEHICLE_LENGTH,
        width: VEHICLE_WIDTH,
        valid: true,
    };

    // target: the path parameter is arc length, zero at the current step
    let pose_at = |step: i64| {
        let s = step as f64 * TIMESTEP * speed;
        if turns && s > 0.0 {
            turning_path(s, d, r)
        } else {
            (Vec2::new(s, 0.0), 0.0)
        }
    };
    let history_start = -(HISTORY_LEN as i64 - 1);
    let history = (history_start..=0)
        .map(|t| {
            let (p, h) = pose_at(t);
            snap(&mut rng, p, h, speed)
        })
        .collect();
    let future = (1..=FUTURE_LEN as i64)
        .map(|t| {
            let (p, h) = pose_at(t);
            snap(&mut rng, p, h, speed)
        })
        .collect();
    let mut tracks = vec![Track {
        agent_id: "target".into(),
        object_type: ObjectType::Vehicle,
        history,
        future: Some(future),
        is_prediction_target: true,
    }];

    // oncoming traffic in the other lane, never a prediction target
    let others = rng.random_range(0..=spec.max_other_agents);
    for j in 0..others {
        let v = uniform(&mut rng, spec.speed_range);
        let x0 = rng.random_range(-30.0..90.0);
        let at = |step: i64| Vec2::new(x0 - step as f64 * TIMESTEP * v, LANE_WIDTH);
        let history = (history_start..=0).map(|t| snap(&mut rng, at(t), PI, v)).collect();
        let future = (1..=FUTURE_LEN as i64).map(|t| snap(&mut rng, at(t), PI, v)).collect();
        tracks.push(Track {
            agent_id: format!("other{j}"),
            object_type: ObjectType::Vehicle,
            history,
            future: Some(future),
            is_prediction_target: false,
        });
    }

    let light = [
        LightState::Red,
        LightState::Yellow,
        LightState::Green,
        LightState::Unknown,
    ][rng.random_range(0..4)];
    let map_features = map_features(spec.kind, d, r, light)
        .into_iter()
        .map(|mut f| {
            f.polyline = f.polyline.iter().map(|&p| place.point(p)).collect();
            f
        })
        .collect();

    let prefix = match spec.kind {
        ScenarioKind::StraightRoad => "straight",
        ScenarioKind::TIntersection => "tjunction",
    };
    LabeledScene {
        scene: Scene {
            scene_id: format!("{prefix}-{}-{index:05}", spec.seed),
            timestep: TIMESTEP,
            map_features,
            tracks,
        },
        mode: if turns { FutureMode::Turn } else { FutureMode::Straight },
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Canonical-frame map: eastbound lane centred on y = 0, westbound on
/// y = 3.5; for a T-junction a side road leaves northwards, its northbound
/// lane centred on x = d.
fn map_features(kind: ScenarioKind, d: f64, r: f64, light: LightState) -> Vec<MapFeature> {
    use MapFeatureKind::*;
    let h = LANE_WIDTH / 2.0;
    let line = |kind, pts: &[(f64, f64)]| MapFeature::new(kind, pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect());
    let (west, east) = (-ROAD_HALF_LENGTH, ROAD_HALF_LENGTH);
    let north_edge = LANE_WIDTH + h;
    let mut out = vec![
        line(LaneCenter, &[(west, 0.0), (east, 0.0)]),
        line(LaneCenter, &[(east, LANE_WIDTH), (west, LANE_WIDTH)]),
        line(RoadLine, &[(west, h), (east, h)]),
        line(RoadEdge, &[(west, -h), (east, -h)]),
    ];
    match kind {
        ScenarioKind::StraightRoad => out.push(line(RoadEdge, &[(west, north_edge), (east, north_edge)])),
        ScenarioKind::TIntersection => {
            let (side_w, side_e) = (d - LANE_WIDTH - h, d + h);
            let top = north_edge + SIDE_ROAD_LENGTH;
            out.push(line(
                RoadEdge,
                &[(west, north_edge), (side_w, north_edge), (side_w, top)],
            ));
            out.push(line(
                RoadEdge,
                &[(east, north_edge), (side_e, north_edge), (side_e, top)],
            ));
            out.push(line(LaneCenter, &[(d, north_edge), (d, top)]));
            out.push(line(LaneCenter, &[(d - LANE_WIDTH, top), (d - LANE_WIDTH, north_edge)]));
            out.push(line(RoadLine, &[(d - h, north_edge), (d - h, top)]));
            let arc: Vec<(f64, f64)> = (0..=8)
                .map(|i| {
                    let phi = FRAC_PI_2 * i as f64 / 8.0;
                    (d - r + r * phi.sin(), r - r * phi.cos())
                })
                .collect();
            out.push(line(LaneCenter, &arc));
            out.push(line(
                Crosswalk,
                &[
                    (side_w, north_edge + 1.0),
                    (side_e, north_edge + 1.0),
                    (side_e, north_edge + 4.0),
                    (side_w, north_edge + 4.0),
                ],
            ));
            let mut signal = line(TrafficLightLane, &[(d - r - 10.0, 0.0), (d - r, 0.0)]);
            signal.light_state = Some(light);
            out.push(signal);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::validate_scene;

    fn spec(count: usize) -> ScenarioSpec {
        ScenarioSpec {
            count,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_scenes() {
        assert_eq!(generate(&spec(20)).unwrap(), generate(&spec(20)).unwrap());
        let other = ScenarioSpec { seed: 8, ..spec(20) };
        assert_ne!(generate(&spec(20)).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn scenes_validate() {
        for kind in [ScenarioKind::StraightRoad, ScenarioKind::TIntersection] {
            for s in generate(&ScenarioSpec { kind, ..spec(30) }).unwrap() {
                assert_eq!(validate_scene(&s), vec![], "{}", s.scene_id);
            }
        }
    }

    #[test]
    fn degenerate_branch_probabilities() {
        let never = generate_labeled(&ScenarioSpec {
            branch_probability: 0.0,
            ..spec(50)
        })
        .unwrap();
        assert!(never.iter().all(|l| l.mode == FutureMode::Straight));
        let always = generate_labeled(&ScenarioSpec {
            branch_probability: 1.0,
            ..spec(50)
        })
        .unwrap();
        assert!(always.iter().all(|l| l.mode == FutureMode::Turn));
        let road = generate_labeled(&ScenarioSpec {
            kind: ScenarioKind::StraightRoad,
            branch_probability: 1.0,
            ..spec(10)
        })
        .unwrap();
        assert!(road.iter().all(|l| l.mode == FutureMode::Straight));
    }

    #[test]
    fn turn_fraction_near_half() {
        let scenes = generate_labeled(&ScenarioSpec {
            max_other_agents: 0,
            ..spec(1000)
        })
        .unwrap();
        let turns = scenes.iter().filter(|l| l.mode == FutureMode::Turn).count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&turns), "{turns}");
    }

    #[test]
    fn turn_ends_in_side_road() {
        let d = 20.0;
        let (p, h) = turning_path(100.0, d, 8.0);
        assert!((p.x - d).abs() < 1e-12 && p.y > 8.0);
        assert_eq!(h, FRAC_PI_2);
        let (q, _) = turning_path(12.0 + 4.0 * PI, d, 8.0);
        assert!((q - Vec2::new(d, 8.0)).norm() < 1e-9);
    }

    #[test]
    fn modes_separate_widely_at_horizon() {
        let fixed = ScenarioSpec {
            speed_range: [10.0, 10.0],
            junction_distance: [20.0, 20.0],
            noise_sigma: 0.0,
            ..spec(40)
        };
        let scenes = generate_labeled(&fixed).unwrap();
        let end = |l: &LabeledScene| {
            let t = &l.scene.tracks[0];
            let c = t.current().unwrap();
            let last = t.future.as_ref().unwrap()[FUTURE_LEN - 1].position;
            (last - c.position).rotate(-c.heading)
        };
        for l in &scenes {
            let e = end(l);
            match l.mode {
                FutureMode::Straight => assert!((e - Vec2::new(80.0, 0.0)).norm() < 1e-9),
                FutureMode::Turn => assert!(e.x < 21.0 && e.y > 40.0, "{e:?}"),
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for bad in [
            ScenarioSpec {
                branch_probability: 1.5,
                ..spec(1)
            },
            ScenarioSpec {
                noise_sigma: -0.1,
                ..spec(1)
            },
            ScenarioSpec {
                speed_range: [5.0, 2.0],
                ..spec(1)
            },
            ScenarioSpec {
                junction_distance: [2.0, 30.0],
                ..spec(1)
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
        }
    }
}
