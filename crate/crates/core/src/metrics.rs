//! Trajectory quality metrics.

use serde::Serialize;

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::scenario::{Scenario, EGO_RADIUS};

/// Mean over steps of the (x, y) distance between two trajectories.
pub fn ade(realized: &[VehicleState], expert: &[VehicleState]) -> Result<f64> {
    if realized.len() != expert.len() {
        return Err(Error::Contract(format!(
            "ade: realized has {} states, expert has {}",
            realized.len(),
            expert.len()
        )));
    }
    if realized.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = realized.iter().zip(expert).map(|(a, b)| (a.x - b.x).hypot(a.y - b.y)).sum();
    Ok(total / realized.len() as f64)
}

/// Smallest ADE among `rollouts` and the index attaining it (lowest on ties).
pub fn min_ade(rollouts: &[Vec<VehicleState>], expert: &[VehicleState]) -> Result<(f64, usize)> {
    if rollouts.is_empty() {
        return Err(Error::Contract("min_ade: no rollouts".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, r) in rollouts.iter().enumerate() {
        let v = ade(r, expert)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Whether the ego disc touches any replayed agent at the same step.
pub fn overlap_flag(realized: &[VehicleState], scn: &Scenario) -> bool {
    realized.iter().enumerate().any(|(t, s)| {
        scn.others.iter().any(|o| {
            let p = o.pose(t);
            (s.x - p.x).hypot(s.y - p.y) < EGO_RADIUS + o.radius
        })
    })
}

/// Whether any step leaves the road corridor.
pub fn offroad_flag(realized: &[VehicleState], scn: &Scenario) -> bool {
    realized
        .iter()
        .any(|s| scn.roadgraph.distance_to_centerline(s.position()) > scn.roadgraph.half_width)
}

/// Metrics of one evaluated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryEval {
    pub ade: f64,
    pub overlap: bool,
    pub offroad: bool,
}

impl TrajectoryEval {
    pub fn of(realized: &[VehicleState], scn: &Scenario) -> Result<Self> {
        Ok(Self {
            ade: ade(realized, &scn.expert.states[..realized.len()])?,
            overlap: overlap_flag(realized, scn),
            offroad: offroad_flag(realized, scn),
        })
    }

    /// Lowest-ADE rollout with its geometric flags.
    pub fn best_of(rollouts: &[Vec<VehicleState>], scn: &Scenario) -> Result<(Self, usize)> {
        let n = rollouts.first().map_or(0, |r| r.len());
        let (_, i) = min_ade(rollouts, &scn.expert.states[..n.min(scn.len())])?;
        Ok((Self::of(&rollouts[i], scn)?, i))
    }
}

/// Dataset-level means of per-scenario metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Summary {
    pub count: usize,
    pub ade: f64,
    pub overlap_rate: f64,
    pub offroad_rate: f64,
}

pub fn summarize(evals: &[TrajectoryEval]) -> Summary {
    if evals.is_empty() {
        return Summary::default();
    }
    let n = evals.len() as f64;
    Summary {
        count: evals.len(),
        ade: evals.iter().map(|e| e.ade).sum::<f64>() / n,
        overlap_rate: evals.iter().filter(|e| e.overlap).count() as f64 / n,
        offroad_rate: evals.iter().filter(|e| e.offroad).count() as f64 / n,
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, AgentPose, OtherAgent, ScenarioKind};

    fn line(n: usize, dx: f64, dy: f64) -> Vec<VehicleState> {
        (0..n).map(|i| VehicleState::from_pose(i as f64 + dx, dy, 0.0, 1.0)).collect()
    }

    #[test]
    fn ade_of_identical_is_zero() {
        let e = line(5, 0.0, 0.0);
        assert_eq!(ade(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn ade_of_unit_shift_is_one() {
        assert_eq!(ade(&line(5, 1.0, 0.0), &line(5, 0.0, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn ade_hand_computed() {
        let a = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)].map(|(x, y)| VehicleState::new(x, y, 0.0, 0.0, 0.0));
        let b = [(3.0, 4.0), (1.0, 1.0), (0.0, 0.0)].map(|(x, y)| VehicleState::new(x, y, 0.0, 0.0, 0.0));
        assert!((ade(&a, &b).unwrap() - (5.0 + 0.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ade_length_mismatch() {
        assert!(matches!(ade(&line(3, 0.0, 0.0), &line(4, 0.0, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn min_ade_picks_expert_copy() {
        let e = line(4, 0.0, 0.0);
        let r = vec![line(4, 2.0, 0.0), e.clone(), e.clone()];
        assert_eq!(min_ade(&r, &e).unwrap(), (0.0, 1));
        assert!(min_ade(&[], &e).is_err());
        let single = vec![line(4, 0.5, 0.0)];
        assert_eq!(min_ade(&single, &e).unwrap().0, ade(&single[0], &e).unwrap());
    }

    #[test]
    fn overlap_with_replayed_agent() {
        let mut scn = generate_scenario(ScenarioKind::Straight, 1);
        let traj = scn.expert.states.clone();
        scn.others = vec![OtherAgent {
            radius: 1.0,
            poses: traj
                .iter()
                .map(|s| AgentPose {
                    x: s.x,
                    y: s.y,
                    yaw: s.yaw,
                    speed: s.speed(),
                })
                .collect(),
        }];
        assert!(overlap_flag(&traj, &scn));
    }

    #[test]
    fn expert_is_on_road() {
        for kind in ScenarioKind::ALL {
            let scn = generate_scenario(kind, 5);
            assert!(!offroad_flag(&scn.expert.states, &scn));
        }
    }

    #[test]
    fn lateral_offset_beyond_half_width_is_offroad() {
        let mut scn = generate_scenario(ScenarioKind::Straight, 0);
        scn.roadgraph.polylines = vec![(0..50).map(|i| [i as f64, 0.0]).collect()];
        scn.roadgraph.half_width = 3.0;
        let parked = vec![VehicleState::from_pose(10.0, 3.5, 0.0, 0.0)];
        assert!(offroad_flag(&parked, &scn));
        let inside = vec![VehicleState::from_pose(10.0, 2.5, 0.0, 0.0)];
        assert!(!offroad_flag(&inside, &scn));
    }

    #[test]
    fn rates_are_means_of_flags() {
        let e = |o, r| TrajectoryEval {
            ade: 1.0,
            overlap: o,
            offroad: r,
        };
        let s = summarize(&[e(true, false), e(false, false), e(false, true), e(false, false)]);
        assert_eq!((s.overlap_rate, s.offroad_rate), (0.25, 0.25));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]) - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
