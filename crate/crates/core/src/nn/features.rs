//! Ego-frame scene features.
//!
//! Layout (35 values): ego speed, goal heading delta, goal distance,
//! 8 nearest roadgraph points (x, y), 4 nearest agents (x, y, vx, vy).
//! Positions and velocities are expressed in the ego frame and divided by
//! fixed scales so every entry is O(1).

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, VehicleState, STATE_DIM};
use crate::scenario::Scenario;

pub const ROAD_POINTS: usize = 8;
pub const AGENT_SLOTS: usize = 4;
pub const GOAL_FEATURES: usize = 2;
pub const FEATURE_LEN: usize = 1 + GOAL_FEATURES + 2 * ROAD_POINTS + 4 * AGENT_SLOTS;

const ROAD_OFFSET: usize = 1 + GOAL_FEATURES;
const AGENT_OFFSET: usize = ROAD_OFFSET + 2 * ROAD_POINTS;

pub const SPEED_SCALE: f64 = 10.0;
pub const POS_SCALE: f64 = 10.0;
pub const VEL_SCALE: f64 = 10.0;
pub const GOAL_DIST_SCALE: f64 = 50.0;

/// What the agent is told about its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteConditioning {
    /// Heading delta towards the final waypoint.
    #[default]
    Heading,
    /// Heading delta and distance to the final waypoint.
    Waypoint,
    None,
}

impl std::str::FromStr for RouteConditioning {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heading" => Ok(Self::Heading),
            "waypoint" => Ok(Self::Waypoint),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown route conditioning {s:?}")),
        }
    }
}

impl std::fmt::Display for RouteConditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Heading => "heading",
            Self::Waypoint => "waypoint",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub road_mask: [bool; ROAD_POINTS],
    pub agent_mask: [bool; AGENT_SLOTS],
}

/// World-frame quantities selected during encoding; everything the
/// state-gradient needs, with neighbour selection held fixed.
#[derive(Debug, Clone)]
pub struct EncodeSaved {
    road: Vec<[f64; 2]>,
    agents: Vec<([f64; 2], [f64; 2])>,
    goal: [f64; 2],
    route: RouteConditioning,
}

fn nearest<T: Copy>(items: impl Iterator<Item = ([f64; 2], T)>, ego: [f64; 2], k: usize) -> Vec<([f64; 2], T)> {
    // (distance^2, insertion index) keeps ties on the lowest index.
    let mut best: Vec<(f64, usize, [f64; 2], T)> = Vec::with_capacity(k + 1);
    for (i, (p, payload)) in items.enumerate() {
        let d = (p[0] - ego[0]).powi(2) + (p[1] - ego[1]).powi(2);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|e| e.0 <= d);
        best.insert(pos, (d, i, p, payload));
        best.truncate(k);
    }
    best.into_iter().map(|(_, _, p, t)| (p, t)).collect()
}

/// Features of the scene at step `t` as seen from ego state `s`.
pub fn encode(scn: &Scenario, t: usize, s: &VehicleState, route: RouteConditioning) -> (FeatureVector, EncodeSaved) {
    let ego = s.position();
    let road: Vec<[f64; 2]> = nearest(scn.roadgraph.points().map(|p| (*p, ())), ego, ROAD_POINTS)
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let agents: Vec<([f64; 2], [f64; 2])> = nearest(
        scn.others.iter().map(|o| {
            let pose = o.pose(t);
            (pose.position(), pose.velocity())
        }),
        ego,
        AGENT_SLOTS,
    );
    let saved = EncodeSaved {
        road,
        agents,
        goal: [scn.goal.x, scn.goal.y],
        route,
    };
    (features_from_saved(&saved, s), saved)
}

pub(crate) fn features_from_saved(saved: &EncodeSaved, s: &VehicleState) -> FeatureVector {
    let mut values = vec![0.0; FEATURE_LEN];
    let (sy, cy) = s.yaw.sin_cos();
    let to_ego = |dx: f64, dy: f64| (cy * dx + sy * dy, -sy * dx + cy * dy);

    values[0] = s.speed() / SPEED_SCALE;
    let (gdx, gdy) = (saved.goal[0] - s.x, saved.goal[1] - s.y);
    match saved.route {
        RouteConditioning::Heading => {
            values[1] = wrap_angle(gdy.atan2(gdx) - s.yaw);
        }
        RouteConditioning::Waypoint => {
            values[1] = wrap_angle(gdy.atan2(gdx) - s.yaw);
            values[2] = gdx.hypot(gdy) / GOAL_DIST_SCALE;
        }
        RouteConditioning::None => {}
    }

    let mut road_mask = [false; ROAD_POINTS];
    for (k, p) in saved.road.iter().enumerate() {
        let (ex, ey) = to_ego(p[0] - s.x, p[1] - s.y);
        values[ROAD_OFFSET + 2 * k] = ex / POS_SCALE;
        values[ROAD_OFFSET + 2 * k + 1] = ey / POS_SCALE;
        road_mask[k] = true;
    }
    let mut agent_mask = [false; AGENT_SLOTS];
    for (k, (p, v)) in saved.agents.iter().enumerate() {
        let (ex, ey) = to_ego(p[0] - s.x, p[1] - s.y);
        let (evx, evy) = to_ego(v[0] - s.vx, v[1] - s.vy);
        let o = AGENT_OFFSET + 4 * k;
        values[o] = ex / POS_SCALE;
        values[o + 1] = ey / POS_SCALE;
        values[o + 2] = evx / VEL_SCALE;
        values[o + 3] = evy / VEL_SCALE;
        agent_mask[k] = true;
    }
    FeatureVector {
        values,
        road_mask,
        agent_mask,
    }
}

/// Gradient of `g . features(s)` with respect to the ego state.
pub fn encode_vjp(saved: &EncodeSaved, s: &VehicleState, g: &[f64]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    let (sy, cy) = s.yaw.sin_cos();

    // speed = vx cos(yaw) + vy sin(yaw)
    let gs = g[0] / SPEED_SCALE;
    out[2] += gs * cy;
    out[3] += gs * sy;
    out[4] += gs * (-s.vx * sy + s.vy * cy);

    if saved.route != RouteConditioning::None {
        let (gdx, gdy) = (saved.goal[0] - s.x, saved.goal[1] - s.y);
        let r2 = gdx * gdx + gdy * gdy;
        if r2 > 1e-12 {
            // heading = atan2(gdy, gdx) - yaw
            out[0] += g[1] * gdy / r2;
            out[1] -= g[1] * gdx / r2;
            out[4] -= g[1];
            if saved.route == RouteConditioning::Waypoint {
                let r = r2.sqrt();
                let gd = g[2] / GOAL_DIST_SCALE;
                out[0] -= gd * gdx / r;
                out[1] -= gd * gdy / r;
            }
        }
    }

    // e = R(-yaw) (p - q): de/dq = -R(-yaw), de/dyaw = (ey, -ex).
    let mut rotated = |gx: f64, gy: f64, dx: f64, dy: f64, ix: usize, iy: usize| {
        let ex = cy * dx + sy * dy;
        let ey = -sy * dx + cy * dy;
        out[ix] += -cy * gx + sy * gy;
        out[iy] += -sy * gx - cy * gy;
        out[4] += gx * ey - gy * ex;
    };
    for (k, p) in saved.road.iter().enumerate() {
        let gx = g[ROAD_OFFSET + 2 * k] / POS_SCALE;
        let gy = g[ROAD_OFFSET + 2 * k + 1] / POS_SCALE;
        rotated(gx, gy, p[0] - s.x, p[1] - s.y, 0, 1);
    }
    for (k, (p, v)) in saved.agents.iter().enumerate() {
        let o = AGENT_OFFSET + 4 * k;
        rotated(g[o] / POS_SCALE, g[o + 1] / POS_SCALE, p[0] - s.x, p[1] - s.y, 0, 1);
        rotated(g[o + 2] / VEL_SCALE, g[o + 3] / VEL_SCALE, v[0] - s.vx, v[1] - s.vy, 2, 3);
    }
    out
}
