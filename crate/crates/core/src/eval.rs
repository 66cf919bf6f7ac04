//! Closed-loop evaluation of trained networks.
//!
//! The random stream of rollout `r` at step `t` of scenario `i` is seeded by
//! `(seed, i, r, t)`, so the first `K` rollouts of a larger evaluation are
//! exactly the rollouts of a `K`-rollout evaluation.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_unchecked, Action, SimConfig, VehicleState};
use crate::error::Result;
use crate::losses::identified_offset;
use crate::metrics::{ade, TrajectoryEval};
use crate::nn::features::{encode, RouteConditioning};
use crate::nn::model::{ego_delta_to_world, Network};
use crate::nn::params::ModelParams;
use crate::parallel::Workers;
use crate::scenario::Scenario;
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub route: RouteConditioning,
    pub sim: SimConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 1,
            route: RouteConditioning::Heading,
            sim: SimConfig::default(),
            seed: 0,
        }
    }
}

/// What chooses the actions in a closed-loop episode.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'p> {
    /// Sample from the policy mixture.
    Policy(&'p ModelParams),
    /// Planner offset turned into an action by inverse kinematics.
    Planner(&'p ModelParams),
    /// Replay the logged expert actions.
    Expert,
}

pub fn step_rng(seed: u64, scenario_id: usize, rollout: usize, t: usize) -> ChaCha8Rng {
    rng_for(&[seed, scenario_id as u64, rollout as u64, t as u64])
}

/// Recurrent state tracking for a closed-loop episode.
pub struct Observer<'p> {
    pub net: Network<'p>,
    pub hidden: Vec<f64>,
    route: RouteConditioning,
}

impl<'p> Observer<'p> {
    pub fn new(params: &'p ModelParams, route: RouteConditioning) -> Self {
        let net = Network::new(params);
        let hidden = net.initial_hidden();
        Self { net, hidden, route }
    }

    /// Advance the hidden state on the scene at `t` seen from `s`.
    pub fn observe(&mut self, scn: &Scenario, t: usize, s: &VehicleState) -> &[f64] {
        let (f, _) = encode(scn, t, s, self.route);
        self.hidden = self.net.core_step(&f.values, &self.hidden);
        &self.hidden
    }
}

/// Run `decide` in closed loop from the expert's first state for the length
/// of the log. `decide` sees the step, current state and hidden state.
pub fn closed_loop<F>(
    params: &ModelParams,
    scn: &Scenario,
    route: RouteConditioning,
    sim: &SimConfig,
    mut decide: F,
) -> Vec<VehicleState>
where
    F: FnMut(usize, &VehicleState, &Network<'_>, &[f64]) -> Action,
{
    let mut obs = Observer::new(params, route);
    let mut s = scn.expert.states[0];
    let mut states = Vec::with_capacity(scn.len());
    states.push(s);
    for t in 0..scn.len().saturating_sub(1) {
        obs.observe(scn, t, &s);
        let a = decide(t, &s, &obs.net, &obs.hidden);
        s = step_unchecked(&s, &a, sim);
        states.push(s);
    }
    states
}

/// Planner action at state `s`.
pub fn planner_action(net: &Network<'_>, hidden: &[f64], s: &VehicleState, sim: &SimConfig) -> Action {
    let d = ego_delta_to_world(s.yaw, &net.planner(hidden));
    let cur = s.to_array();
    let target = VehicleState::from_slice(&std::array::from_fn::<f64, 5, _>(|i| cur[i] + d[i]));
    crate::dynamics::inv_kin_unchecked(s, &target, sim)
}

/// One closed-loop trajectory.
pub fn rollout(driver: Driver<'_>, scn: &Scenario, scenario_id: usize, rollout_id: usize, cfg: &EvalConfig) -> Vec<VehicleState> {
    match driver {
        Driver::Expert => {
            let mut s = scn.expert.states[0];
            let mut out = vec![s];
            for a in &scn.expert.actions {
                s = step_unchecked(&s, a, &cfg.sim);
                out.push(s);
            }
            out
        }
        Driver::Policy(p) => closed_loop(p, scn, cfg.route, &cfg.sim, |t, _, net, h| {
            let mut rng = step_rng(cfg.seed, scenario_id, rollout_id, t);
            net.policy(h).sample(&mut rng)
        }),
        Driver::Planner(p) => closed_loop(p, scn, cfg.route, &cfg.sim, |_, s, net, h| {
            planner_action(net, h, s, &cfg.sim)
        }),
    }
}

/// Per-scenario evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario_id: usize,
    pub kind: String,
    pub rollouts: usize,
    /// ADE for one rollout, minADE otherwise, with flags of that rollout.
    pub eval: TrajectoryEval,
    pub best_rollout: usize,
}

pub fn evaluate(driver: Driver<'_>, scenarios: &[Scenario], cfg: &EvalConfig, workers: &Workers) -> Result<Vec<ScenarioReport>> {
    // Deterministic drivers give identical rollouts; one suffices.
    let k = match driver {
        Driver::Policy(_) => cfg.rollouts.max(1),
        _ => 1,
    };
    workers
        .map(scenarios, |i, scn| {
            let trajs: Vec<_> = (0..k).map(|r| rollout(driver, scn, i, r, cfg)).collect();
            let (eval, best) = TrajectoryEval::best_of(&trajs, scn)?;
            Ok(ScenarioReport {
                scenario_id: i,
                kind: scn.kind.name().to_string(),
                rollouts: cfg.rollouts.max(1),
                eval,
                best_rollout: best,
            })
        })
        .into_iter()
        .collect()
}

/// minADE of each scenario for every K in `ks`, sharing rollouts across K.
pub fn min_ade_curve(
    params: &ModelParams,
    scenarios: &[Scenario],
    ks: &[usize],
    cfg: &EvalConfig,
    workers: &Workers,
) -> Result<Vec<Vec<f64>>> {
    let kmax = ks.iter().copied().max().unwrap_or(1);
    workers
        .map(scenarios, |i, scn| {
            let ades = (0..kmax)
                .map(|r| ade(&rollout(Driver::Policy(params), scn, i, r, cfg), &scn.expert.states))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ks
                .iter()
                .map(|&k| ades[..k].iter().copied().fold(f64::INFINITY, f64::min))
                .collect())
        })
        .into_iter()
        .collect()
}

pub fn write_eval_csv<W: Write>(rows: &[ScenarioReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scenario_id,kind,rollouts,ade,overlap,offroad")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scenario_id, r.kind, r.rollouts, r.eval.ade, r.eval.overlap as u8, r.eval.offroad as u8
        )?;
    }
    Ok(())
}

/// Predicted inverse-state displacement norms (identified part, see
/// [`identified_offset`]) and realized distances to the
/// log while replaying expert actions with acceleration raised by
/// `gain * |accel|`.
pub fn inverse_probe(
    params: &ModelParams,
    scn: &Scenario,
    route: RouteConditioning,
    gain: f64,
    sim: &SimConfig,
) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Observer::new(params, route);
    let mut s = scn.expert.states[0];
    let mut predicted = Vec::new();
    let mut realized = Vec::new();
    for (t, ea) in scn.expert.actions.iter().enumerate() {
        obs.observe(scn, t, &s);
        let a = Action::new(ea.accel + gain * ea.accel.abs(), ea.curvature);
        let d = identified_offset(&s, &ego_delta_to_world(s.yaw, &obs.net.inverse(&obs.hidden, &a)));
        predicted.push(d.iter().map(|v| v * v).sum::<f64>().sqrt());
        let e = scn.expert.states[t];
        realized.push((s.x - e.x).hypot(s.y - e.y));
        s = step_unchecked(&s, &a, sim);
    }
    (predicted, realized)
}
