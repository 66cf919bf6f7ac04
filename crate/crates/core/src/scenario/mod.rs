//! Synthetic driving scenarios: road geometry, a dynamically consistent
//! expert trajectory and replayed background agents.

mod dataset;
mod generate;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, VehicleState};

pub use dataset::{load_dataset, save_dataset, DATASET_SCHEMA_VERSION};
pub use generate::{generate_scenario, generate_suite, GeneratorParams};

pub const DEFAULT_HALF_WIDTH: f64 = 3.0;
pub const DEFAULT_EPISODE_LEN: usize = 80;
pub const EGO_RADIUS: f64 = 1.0;
pub const AGENT_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Straight,
    Arc,
    SCurve,
    Fork,
    StopGo,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Straight,
        ScenarioKind::Arc,
        ScenarioKind::SCurve,
        ScenarioKind::Fork,
        ScenarioKind::StopGo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Arc => "arc",
            ScenarioKind::SCurve => "s-curve",
            ScenarioKind::Fork => "fork",
            ScenarioKind::StopGo => "stop-go",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario kind {s:?}"))
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Lane centerlines (one polyline per lane segment; forks have several)
/// with a common corridor half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct Roadgraph {
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub half_width: f64,
}

impl Roadgraph {
    pub fn points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polylines.iter().flatten()
    }

    /// Euclidean distance from `p` to the closest centerline segment.
    pub fn distance_to_centerline(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for line in &self.polylines {
            if line.len() == 1 {
                best = best.min(dist(p, line[0]));
            }
            for seg in line.windows(2) {
                best = best.min(point_segment_distance(p, seg[0], seg[1]));
            }
        }
        best
    }

    pub fn is_valid(&self) -> bool {
        !self.polylines.is_empty()
            && self
                .polylines
                .iter()
                .all(|l| l.len() >= 2 && l.windows(2).all(|w| w[0] != w[1]))
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Logged expert states and the actions that produced them:
/// `states[t + 1] == step(states[t], actions[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    pub states: Vec<VehicleState>,
    pub actions: Vec<Action>,
}

impl ExpertTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

impl AgentPose {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.speed * c, self.speed * s]
    }
}

/// A background disc agent replayed from its log, independent of the ego.
#[derive(Debug, Clone, PartialEq)]
pub struct OtherAgent {
    pub radius: f64,
    pub poses: Vec<AgentPose>,
}

impl OtherAgent {
    /// Pose at step `t`, holding the last logged pose past the end.
    pub fn pose(&self, t: usize) -> AgentPose {
        self.poses[t.min(self.poses.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub roadgraph: Roadgraph,
    pub expert: ExpertTrajectory,
    pub others: Vec<OtherAgent>,
    pub goal: Goal,
}

impl Scenario {
    /// Number of logged states.
    pub fn len(&self) -> usize {
        self.expert.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expert.is_empty()
    }

    /// Expert state at `t`, clamped to the end of the log.
    pub fn expert_state(&self, t: usize) -> &VehicleState {
        &self.expert.states[t.min(self.expert.states.len() - 1)]
    }
}
