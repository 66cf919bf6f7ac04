use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AgentPose, ExpertTrajectory, Goal, OtherAgent, Roadgraph, Scenario, ScenarioKind, AGENT_RADIUS, DEFAULT_EPISODE_LEN,
    DEFAULT_HALF_WIDTH,
};
use crate::dynamics::{step_unchecked, Action, SimConfig, VehicleState};
use crate::seeding::mix_seed;

/// Knobs shared by every generated scenario; echoed into dataset headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub episode_len: usize,
    pub half_width: f64,
    pub point_spacing: f64,
    pub road_length: f64,
    pub cruise_speed: f64,
    pub dt: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            episode_len: DEFAULT_EPISODE_LEN,
            half_width: DEFAULT_HALF_WIDTH,
            point_spacing: 1.0,
            road_length: 220.0,
            cruise_speed: 10.0,
            dt: crate::dynamics::DEFAULT_DT,
        }
    }
}

const SPEED_MIN: f64 = 0.5;
const SPEED_MAX: f64 = 15.0;
const EXPERT_ACCEL_LIMIT: f64 = 3.0;
const SPEED_GAIN: f64 = 0.6;
const LANE_OFFSET: f64 = 6.5;

/// Deterministic scenario of the given kind. Generation is total: every
/// seed yields a valid scenario.
pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    generate_with(kind, seed, &GeneratorParams::default())
}

/// `count` scenarios cycling through `kinds`, seeded `base_seed, base_seed + 1, ...`.
pub fn generate_suite(kinds: &[ScenarioKind], count: usize, base_seed: u64) -> Vec<Scenario> {
    (0..count)
        .map(|i| generate_scenario(kinds[i % kinds.len()], base_seed + i as u64))
        .collect()
}

pub(crate) fn generate_with(kind: ScenarioKind, seed: u64, params: &GeneratorParams) -> Scenario {
    // Fork pairs (2m, 2m + 1) share geometry and speed and differ only in
    // the branch the expert takes.
    let geometry_seed = match kind {
        ScenarioKind::Fork => seed / 2,
        _ => seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[geometry_seed, kind as u64, 0x5ce7]));

    let origin = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
    let heading = rng.random_range(-PI..PI);
    let n_points = (params.road_length / params.point_spacing) as usize + 1;
    let sim = SimConfig {
        dt: params.dt,
        ..SimConfig::default()
    };

    let (polylines, path) = match kind {
        ScenarioKind::Straight | ScenarioKind::StopGo => {
            let line = integrate_centerline(origin, heading, n_points, params.point_spacing, |_| 0.0);
            (vec![line.clone()], line)
        }
        ScenarioKind::Arc => {
            let k = rng.random_range(0.01..0.035) * sign(&mut rng);
            let line = integrate_centerline(origin, heading, n_points, params.point_spacing, |_| k);
            (vec![line.clone()], line)
        }
        ScenarioKind::SCurve => {
            let amp = rng.random_range(0.015..0.035) * sign(&mut rng);
            let period = rng.random_range(60.0..100.0);
            let line = integrate_centerline(origin, heading, n_points, params.point_spacing, |s| {
                amp * (2.0 * PI * s / period).sin()
            });
            (vec![line.clone()], line)
        }
        ScenarioKind::Fork => {
            let trunk_len = rng.random_range(15.0..30.0);
            let k_branch = rng.random_range(0.03..0.05);
            let bend_len = rng.random_range(25.0..35.0);
            let trunk_n = (trunk_len / params.point_spacing) as usize + 1;
            let trunk = integrate_centerline(origin, heading, trunk_n, params.point_spacing, |_| 0.0);
            let junction = *trunk.last().unwrap();
            let branch_n = n_points.saturating_sub(trunk_n) + 1;
            let branch = |k: f64| {
                integrate_centerline(junction, heading, branch_n, params.point_spacing, |s| {
                    if s < bend_len {
                        k
                    } else {
                        0.0
                    }
                })
            };
            let left = branch(k_branch);
            let right = branch(-k_branch);
            let taken = if seed.is_multiple_of(2) { &left } else { &right };
            let mut path = trunk.clone();
            path.extend_from_slice(&taken[1..]);
            (vec![trunk, left, right], path)
        }
    };

    let roadgraph = Roadgraph {
        polylines,
        half_width: params.half_width,
    };
    let path = Path::new(path);

    let v0 = match kind {
        ScenarioKind::StopGo => rng.random_range(6.0..11.0),
        _ => {
            if rng.random_bool(0.5) {
                rng.random_range(3.0..8.0)
            } else {
                rng.random_range(12.0..14.5)
            }
        }
    };

    let lead = if kind == ScenarioKind::StopGo {
        Some(LeadProfile {
            gap0: rng.random_range(18.0..25.0),
            v0,
            brake_at: rng.random_range(1.0..2.5),
            v_min: rng.random_range(1.0..3.0),
            hold: rng.random_range(0.5..1.5),
        })
    } else {
        None
    };

    let start = VehicleState::from_pose(path.points[0][0], path.points[0][1], heading, v0);
    let mut states = Vec::with_capacity(params.episode_len);
    let mut actions = Vec::with_capacity(params.episode_len.saturating_sub(1));
    states.push(start);
    let mut progress = Vec::with_capacity(params.episode_len);
    let mut cursor = 0usize;
    let lead_track = lead.map(|l| l.arclengths(params.episode_len, params.dt));
    for t in 0..params.episode_len {
        let s = states[t];
        let (s_along, seg) = path.project(s.position(), cursor);
        cursor = seg;
        progress.push(s_along);
        if t + 1 == params.episode_len {
            break;
        }
        let v = s.speed();
        let lookahead = (0.6 * v + 3.0).clamp(4.0, 12.0);
        let (target, _) = path.at(s_along + lookahead);
        let (sy, cy) = s.yaw.sin_cos();
        let (dx, dy) = (target[0] - s.x, target[1] - s.y);
        let lx = cy * dx + sy * dy;
        let ly = -sy * dx + cy * dy;
        let curvature = 2.0 * ly / (lx * lx + ly * ly);

        let desired = match &lead_track {
            Some(track) => {
                let (lead_s, lead_v) = track[t];
                let gap = lead_s - s_along;
                0.3 * (gap - (6.0 + 1.0 * v)) + 0.8 * (lead_v - v)
            }
            None => SPEED_GAIN * (params.cruise_speed - v),
        };
        let lo = ((SPEED_MIN - v) / params.dt).max(-EXPERT_ACCEL_LIMIT);
        let hi = ((SPEED_MAX - v) / params.dt).min(EXPERT_ACCEL_LIMIT);
        let accel = desired.clamp(lo, hi);
        let (a, _) = sim.clip(Action::new(accel, curvature));
        actions.push(a);
        states.push(step_unchecked(&s, &a, &sim));
    }

    let mut others = Vec::new();
    match kind {
        ScenarioKind::Fork => {}
        ScenarioKind::StopGo => {
            let track = lead_track.as_ref().unwrap();
            others.push(OtherAgent {
                radius: AGENT_RADIUS,
                poses: track.iter().map(|&(s, v)| path.pose(s, 0.0, v)).collect(),
            });
            if rng.random_bool(0.5) {
                others.push(cruiser(&path, &mut rng, params));
            }
        }
        _ => {
            // A companion in the adjacent lane keeps pace with the expert.
            let side = sign(&mut rng);
            let offset = rng.random_range(-15.0..20.0);
            let poses = (0..params.episode_len)
                .map(|t| {
                    let s = progress[t] + offset;
                    let next = progress[(t + 1).min(params.episode_len - 1)] + offset;
                    let prev = progress[t.saturating_sub(1)] + offset;
                    let span = ((t + 1).min(params.episode_len - 1) - t.saturating_sub(1)) as f64;
                    path.pose(s, side * LANE_OFFSET, (next - prev) / (span * params.dt))
                })
                .collect();
            others.push(OtherAgent {
                radius: AGENT_RADIUS,
                poses,
            });
            let extra = rng.random_range(0..=2);
            for _ in 0..extra {
                others.push(cruiser(&path, &mut rng, params));
            }
        }
    }

    let last = states.last().copied().unwrap_or(start);
    Scenario {
        kind,
        seed,
        roadgraph,
        expert: ExpertTrajectory { states, actions },
        others,
        goal: Goal {
            x: last.x,
            y: last.y,
            yaw: last.yaw,
        },
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Constant-speed agent following a lane parallel to the path.
fn cruiser(path: &Path, rng: &mut ChaCha8Rng, params: &GeneratorParams) -> OtherAgent {
    let side = sign(rng);
    let s0 = rng.random_range(0.0..60.0);
    let speed = rng.random_range(4.0..12.0);
    let poses = (0..params.episode_len)
        .map(|t| path.pose(s0 + speed * params.dt * t as f64, side * LANE_OFFSET, speed))
        .collect();
    OtherAgent {
        radius: AGENT_RADIUS,
        poses,
    }
}

fn integrate_centerline(origin: [f64; 2], heading: f64, n: usize, ds: f64, curvature: impl Fn(f64) -> f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(n);
    let mut p = origin;
    let mut theta = heading;
    pts.push(p);
    for i in 1..n {
        let s = (i - 1) as f64 * ds;
        let k = curvature(s + 0.5 * ds);
        let mid = theta + 0.5 * k * ds;
        p = [p[0] + ds * mid.cos(), p[1] + ds * mid.sin()];
        theta += k * ds;
        pts.push(p);
    }
    pts
}

#[derive(Debug, Clone, Copy)]
struct LeadProfile {
    gap0: f64,
    v0: f64,
    brake_at: f64,
    v_min: f64,
    hold: f64,
}

impl LeadProfile {
    const BRAKE: f64 = 3.0;
    const RESUME: f64 = 2.0;

    fn speed(&self, time: f64) -> f64 {
        let brake_end = self.brake_at + (self.v0 - self.v_min) / Self::BRAKE;
        let resume = brake_end + self.hold;
        if time < self.brake_at {
            self.v0
        } else if time < brake_end {
            self.v0 - Self::BRAKE * (time - self.brake_at)
        } else if time < resume {
            self.v_min
        } else {
            (self.v_min + Self::RESUME * (time - resume)).min(self.v0)
        }
    }

    /// (arclength, speed) per step.
    fn arclengths(&self, n: usize, dt: f64) -> Vec<(f64, f64)> {
        let mut s = self.gap0;
        (0..n)
            .map(|t| {
                let v = self.speed(t as f64 * dt);
                let out = (s, v);
                let v_next = self.speed((t + 1) as f64 * dt);
                s += 0.5 * (v + v_next) * dt;
                out
            })
            .collect()
    }
}

/// Arclength-parameterised polyline used for scripted tracking.
struct Path {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Path {
    fn new(points: Vec<[f64; 2]>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += super::dist(w[0], w[1]);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and tangent heading at arclength `s` (extrapolated linearly past either end).
    fn at(&self, s: f64) -> ([f64; 2], f64) {
        let n = self.points.len();
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / len;
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], heading)
    }

    fn pose(&self, s: f64, lateral: f64, speed: f64) -> AgentPose {
        let s = s.min(self.total());
        let (p, h) = self.at(s);
        let (sh, ch) = h.sin_cos();
        AgentPose {
            x: p[0] - sh * lateral,
            y: p[1] + ch * lateral,
            yaw: h,
            speed,
        }
    }

    /// Arclength of the closest point, searching forward from segment `hint`.
    fn project(&self, p: [f64; 2], hint: usize) -> (f64, usize) {
        let n = self.points.len();
        let lo = hint.saturating_sub(2);
        let hi = (hint + 40).min(n - 1);
        let mut best = (f64::INFINITY, 0.0, hint);
        for i in lo..hi {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * dx, a[1] + t * dy];
            let d = super::dist(p, q);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * len2.sqrt(), i);
            }
        }
        (best.1, best.2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step;

    #[test]
    fn straight_expert_keeps_heading() {
        for seed in 0..5 {
            let s = generate_scenario(ScenarioKind::Straight, seed);
            let yaw0 = s.expert.states[0].yaw;
            assert!(s.expert.states.iter().all(|st| (st.yaw - yaw0).abs() < 1e-9));
            assert!(s.expert.actions.iter().all(|a| a.curvature.abs() < 1e-6));
        }
    }

    #[test]
    fn fork_pair_diverges() {
        let a = generate_scenario(ScenarioKind::Fork, 0);
        let b = generate_scenario(ScenarioKind::Fork, 1);
        assert_eq!(a.expert.states[0], b.expert.states[0]);
        let (pa, pb) = (a.expert.states.last().unwrap(), b.expert.states.last().unwrap());
        let gap = (pa.x - pb.x).hypot(pa.y - pb.y);
        assert!(gap > 5.0, "fork endpoints only {gap} m apart");
    }

    #[test]
    fn expert_is_consistent_on_road_and_in_speed_range() {
        let cfg = SimConfig::default();
        for kind in ScenarioKind::ALL {
            for seed in 0..24 {
                let s = generate_scenario(kind, seed);
                assert_eq!(s.len(), DEFAULT_EPISODE_LEN);
                assert_eq!(s.expert.actions.len(), DEFAULT_EPISODE_LEN - 1);
                assert!(s.roadgraph.is_valid());
                for (t, a) in s.expert.actions.iter().enumerate() {
                    assert!(a.accel.abs() <= cfg.accel_max && a.curvature.abs() <= cfg.curvature_max);
                    let next = step(&s.expert.states[t], a, &cfg).unwrap();
                    assert_eq!(next, s.expert.states[t + 1], "{kind} seed {seed} step {t}");
                }
                for st in &s.expert.states {
                    let lateral = s.roadgraph.distance_to_centerline(st.position());
                    assert!(lateral < s.roadgraph.half_width, "{kind} seed {seed}: {lateral}");
                    let v = st.speed();
                    assert!((SPEED_MIN..=SPEED_MAX).contains(&v), "{kind} seed {seed}: v={v}");
                }
                let last = s.expert.states.last().unwrap();
                assert_eq!((s.goal.x, s.goal.y, s.goal.yaw), (last.x, last.y, last.yaw));
                for o in &s.others {
                    assert_eq!(o.poses.len(), s.len());
                }
            }
        }
    }

    #[test]
    fn stop_go_expert_keeps_its_distance() {
        for seed in 0..24 {
            let s = generate_scenario(ScenarioKind::StopGo, seed);
            let lead = &s.others[0];
            let min_gap = s
                .expert
                .states
                .iter()
                .enumerate()
                .map(|(t, st)| super::super::dist(st.position(), lead.pose(t).position()))
                .fold(f64::INFINITY, f64::min);
            assert!(min_gap > 5.0, "seed {seed}: gap {min_gap}");
        }
    }

    #[test]
    fn generation_is_reproducible() {
        for kind in ScenarioKind::ALL {
            assert_eq!(generate_scenario(kind, 42), generate_scenario(kind, 42));
        }
    }
}
