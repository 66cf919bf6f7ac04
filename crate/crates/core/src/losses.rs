//! Training objectives with the simulator inside the loss graph.
//!
//! Every head-level loss has two layers: a `*_node` builder that adds the
//! loss to a [`Tape`] given a world-frame prediction variable, and a plain
//! `*_value` evaluator of the same expression for injecting minimizers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::{inv_kin_unchecked, inverse_step_unchecked, step_unchecked, Action, SimConfig, VehicleState, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::features::{encode, RouteConditioning};
use crate::nn::model::{
    core_step, inverse_forward, odometry_forward, planner_forward, policy_forward, MixtureOutput, ACTION_SCALE, LOG_STD_OFFSET,
};
use crate::nn::params::{GradientAccumulator, ModelParams, ParamGroup};
use crate::scenario::Scenario;

pub const NLL_WEIGHT: f64 = 0.01;

/// Settings shared by the episode losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub sim: SimConfig,
    pub route: RouteConditioning,
    pub nll_weight: f64,
    /// Truncate episodes to this many transitions.
    pub horizon: Option<usize>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            route: RouteConditioning::Heading,
            nll_weight: NLL_WEIGHT,
            horizon: None,
        }
    }
}

impl EpisodeConfig {
    pub fn transitions(&self, scn: &Scenario) -> usize {
        let n = scn.len().saturating_sub(1);
        self.horizon.map_or(n, |h| h.min(n))
    }
}

fn xy_dist(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn sq_norm(a: &[f64; STATE_DIM], b: &[f64; STATE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn add(s: &VehicleState, d: &[f64; STATE_DIM]) -> VehicleState {
    let a = s.to_array();
    VehicleState::from_slice(&std::array::from_fn::<f64, STATE_DIM, _>(|i| a[i] + d[i]))
}

fn sub(s: &VehicleState, d: &[f64; STATE_DIM]) -> VehicleState {
    add(s, &d.map(|v| -v))
}

/// Winner-take-all choice of a mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtaChoice {
    pub component: usize,
    pub eps: [f64; 2],
    pub action: Action,
}

/// Index of the component whose mean action lands closest (in x, y) to
/// `target` from `s`. Ties go to the lowest index.
pub fn wta_winner(mix: &MixtureOutput, s: &VehicleState, target: &VehicleState, sim: &SimConfig) -> usize {
    let mut best = (f64::INFINITY, 0);
    for c in 0..mix.len() {
        let d = xy_dist(&step_unchecked(s, &mix.mean_action(c), sim), target);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Pick the winner and draw a reparameterised action from it.
pub fn wta_select<R: Rng + ?Sized>(
    mix: &MixtureOutput,
    s: &VehicleState,
    target: &VehicleState,
    sim: &SimConfig,
    rng: &mut R,
) -> WtaChoice {
    let component = wta_winner(mix, s, target, sim);
    let eps = MixtureOutput::draw_eps(rng);
    WtaChoice {
        component,
        eps,
        action: mix.action_from(component, eps),
    }
}

/// Loss, gradients and the realized trajectory of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub loss: f64,
    pub state_loss: f64,
    pub grads: GradientAccumulator,
    pub states: Vec<VehicleState>,
    pub actions: Vec<Action>,
}

fn check_finite(v: f64, scenario: usize, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { scenario, step })
    }
}

/// Policy episode: autoregressive rollout from the expert's first state with
/// winner-take-all sampling, state loss over all channels plus the winner's
/// negative log-weight, full backpropagation through time.
pub fn apg_episode<R: Rng + ?Sized>(
    params: &ModelParams,
    scn: &Scenario,
    scenario_id: usize,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let mut tape = Tape::new(params);
    for g in ParamGroup::HEADS {
        tape.freeze(g);
    }
    let layout = params.layout();
    let steps = cfg.transitions(scn);
    let mut s = tape.constant(scn.expert.states[0].to_array().to_vec());
    let mut h = tape.constant(vec![0.0; params.config().hidden]);
    let mut terms = Vec::with_capacity(2 * steps);
    let mut weights = Vec::with_capacity(2 * steps);
    let mut states = vec![tape.state(s)];
    let mut actions = Vec::with_capacity(steps);
    let mut state_loss = 0.0;

    for t in 0..steps {
        let cur = tape.state(s);
        let (_, saved) = encode(scn, t, &cur, cfg.route);
        let f = tape.encode(s, saved);
        h = core_step(&mut tape, &layout, f, h);
        let raw = policy_forward(&mut tape, &layout, h);
        let mix = MixtureOutput::from_raw(tape.value(raw));
        let target = scn.expert.states[t + 1];
        let choice = wta_select(&mix, &cur, &target, &cfg.sim, rng);
        let a = tape.mixture_sample(raw, choice.component, choice.eps, ACTION_SCALE, LOG_STD_OFFSET);
        s = tape.step(s, a, cfg.sim);
        let l = tape.sq_dist(s, &target.to_array());
        let logged = scn.expert.actions[t];
        let norm = [logged.accel / ACTION_SCALE[0], logged.curvature / ACTION_SCALE[1]];
        let weight_nll = tape.mixture_nll(raw, choice.component);
        let density_nll = tape.gaussian_nll(raw, choice.component, norm, LOG_STD_OFFSET);
        let nll = tape.add(weight_nll, density_nll);
        let lv = tape.scalar(l);
        check_finite(lv + tape.scalar(nll), scenario_id, t)?;
        state_loss += lv;
        terms.extend([l, nll]);
        weights.extend([1.0, cfg.nll_weight]);
        actions.push(tape.action(a));
        states.push(tape.state(s));
    }
    finish(tape, &terms, &weights, state_loss, states, actions)
}

fn finish(
    tape: Tape<'_>,
    terms: &[Var],
    weights: &[f64],
    state_loss: f64,
    states: Vec<VehicleState>,
    actions: Vec<Action>,
) -> Result<EpisodeResult> {
    if terms.is_empty() {
        return Ok(EpisodeResult {
            loss: 0.0,
            state_loss,
            grads: GradientAccumulator::zeros_like(tape.params()),
            states,
            actions,
        });
    }
    let mut tape = tape;
    let total = tape.weighted_sum(terms, weights);
    let loss = tape.scalar(total);
    let grads = tape.backward(total, &[1.0])?.params;
    Ok(EpisodeResult {
        loss,
        state_loss,
        grads,
        states,
        actions,
    })
}

/// Planner episode: the head proposes an offset, inverse kinematics turns it
/// into an action, the simulator executes it. Gradients flow through the
/// simulator, inverse kinematics and the head across all steps.
///
/// Only the planner head is trained; `cfg.sim` should have clipping disabled.
pub fn planner_episode(params: &ModelParams, scn: &Scenario, scenario_id: usize, cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    let mut tape = Tape::new(params);
    for g in ParamGroup::ALL {
        if g != ParamGroup::Planner {
            tape.freeze(g);
        }
    }
    let layout = params.layout();
    let steps = cfg.transitions(scn);
    let mut s = tape.constant(scn.expert.states[0].to_array().to_vec());
    let mut h = tape.constant(vec![0.0; params.config().hidden]);
    let mut terms = Vec::with_capacity(steps);
    let mut states = vec![tape.state(s)];
    let mut actions = Vec::with_capacity(steps);
    let mut state_loss = 0.0;

    for t in 0..steps {
        let cur = tape.state(s);
        let (_, saved) = encode(scn, t, &cur, cfg.route);
        let f = tape.encode(s, saved);
        h = core_step(&mut tape, &layout, f, h);
        let raw = planner_forward(&mut tape, &layout, h);
        let d = tape.ego_to_world(s, raw);
        let target = tape.add(s, d);
        let a = tape.inv_kin(s, target, cfg.sim);
        s = tape.step(s, a, cfg.sim);
        let l = tape.sq_dist(s, &scn.expert.states[t + 1].to_array());
        let lv = tape.scalar(l);
        check_finite(lv, scenario_id, t)?;
        state_loss += lv;
        terms.push(l);
        actions.push(tape.action(a));
        states.push(tape.state(s));
    }
    let w = vec![1.0; terms.len()];
    finish(tape, &terms, &w, state_loss, states, actions)
}

/// `||step(s_next - d, a) - s_next||^2` with `d` a world-frame delta variable.
pub fn odometry_node(tape: &mut Tape<'_>, s_next: &VehicleState, a: Var, d: Var, sim: SimConfig) -> Var {
    let target = s_next.to_array();
    let est = tape.affine(d, vec![-1.0; STATE_DIM], &target);
    let fwd = tape.step(est, a, sim);
    tape.sq_dist(fwd, &target)
}

pub fn odometry_value(s_next: &VehicleState, a: &Action, d: &[f64; STATE_DIM], sim: &SimConfig) -> f64 {
    sq_norm(&step_unchecked(&sub(s_next, d), a, sim).to_array(), &s_next.to_array())
}

/// `||inverse_step(s + d, a) - s||^2` with `d` a world-frame delta variable.
pub fn odometry_inverse_node(tape: &mut Tape<'_>, s: &VehicleState, a: Var, d: Var, sim: SimConfig) -> Var {
    let cur = s.to_array();
    let est = tape.affine(d, vec![1.0; STATE_DIM], &cur);
    let back = tape.inverse_step(est, a, sim);
    tape.sq_dist(back, &cur)
}

pub fn odometry_inverse_value(s: &VehicleState, a: &Action, d: &[f64; STATE_DIM], sim: &SimConfig) -> f64 {
    sq_norm(&inverse_step_unchecked(&add(s, d), a, sim).to_array(), &s.to_array())
}

/// `||step(s + d, a) - expert_next||^2` with `d` a world-frame delta variable.
pub fn inverse_state_node(
    tape: &mut Tape<'_>,
    s: &VehicleState,
    a: Var,
    d: Var,
    expert_next: &VehicleState,
    sim: SimConfig,
) -> Var {
    let shifted = tape.affine(d, vec![1.0; STATE_DIM], &s.to_array());
    let fwd = tape.step(shifted, a, sim);
    tape.sq_dist(fwd, &expert_next.to_array())
}

pub fn inverse_state_value(
    s: &VehicleState,
    a: &Action,
    d: &[f64; STATE_DIM],
    expert_next: &VehicleState,
    sim: &SimConfig,
) -> f64 {
    sq_norm(&step_unchecked(&add(s, d), a, sim).to_array(), &expert_next.to_array())
}

/// `d` with the velocity of `s + d` replaced by its projection onto the
/// heading of `s + d`. `step` reads velocity only through that projection,
/// so the inverse-state and forward odometry losses leave the perpendicular
/// part free; this drops it.
pub fn identified_offset(s: &VehicleState, d: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let q = add(s, d);
    let aligned = VehicleState::from_pose(q.x, q.y, q.yaw, q.speed()).to_array();
    let c = s.to_array();
    std::array::from_fn(|i| aligned[i] - c[i])
}

/// One planner step: `||step(s, inv_kin(s, s + d)) - expert_next||^2`.
pub fn planner_step_value(s: &VehicleState, d: &[f64; STATE_DIM], expert_next: &VehicleState, sim: &SimConfig) -> f64 {
    let a = inv_kin_unchecked(s, &add(s, d), sim);
    sq_norm(&step_unchecked(s, &a, sim).to_array(), &expert_next.to_array())
}

/// Direct regression of the observed change, no simulator in the graph.
pub fn direct_delta_node(tape: &mut Tape<'_>, s: &VehicleState, s_next: &VehicleState, d: Var) -> Var {
    let a = s.to_array();
    let b = s_next.to_array();
    let target: Vec<f64> = (0..STATE_DIM).map(|i| b[i] - a[i]).collect();
    tape.sq_dist(d, &target)
}

/// Training objective of the odometry head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdometryObjective {
    /// `||step(s_{t+1} - d, a) - s_{t+1}||^2`.
    #[default]
    Forward,
    /// `||inverse_step(s_t + d, a) - s_t||^2`.
    Inverse,
    /// `||d - (s_{t+1} - s_t)||^2`, the simulator-free ablation.
    Direct,
}

impl std::str::FromStr for OdometryObjective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Self::Forward),
            "inverse" => Ok(Self::Inverse),
            "direct" => Ok(Self::Direct),
            _ => Err(format!("unknown odometry objective {s:?}")),
        }
    }
}

/// One logged transition from a frozen-policy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: VehicleState,
    pub action: Action,
    pub next: VehicleState,
    pub expert_next: VehicleState,
    /// Recurrent state after observing `state`.
    pub hidden: Vec<f64>,
}

/// Per-head sums over a batch of transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadLosses {
    pub odometry: f64,
    pub inverse: f64,
}

/// Odometry and inverse-state losses over `transitions`, weighted and summed
/// on one tape. A zero weight leaves that head out of the graph.
pub fn transition_losses(
    params: &ModelParams,
    transitions: &[Transition],
    objective: OdometryObjective,
    odo_weight: f64,
    inv_weight: f64,
    sim: SimConfig,
) -> Result<(HeadLosses, GradientAccumulator)> {
    let mut tape = Tape::new(params);
    for g in ParamGroup::ALL {
        if g != ParamGroup::Odometry && g != ParamGroup::Inverse {
            tape.freeze(g);
        }
    }
    let layout = params.layout();
    let mut odo = Vec::new();
    let mut inv = Vec::new();
    for tr in transitions {
        let h = tape.constant(tr.hidden.clone());
        let a = tape.constant(tr.action.to_array().to_vec());
        let s = tape.constant(tr.state.to_array().to_vec());
        if odo_weight > 0.0 {
            let raw = odometry_forward(&mut tape, &layout, h, a);
            let d = tape.ego_to_world(s, raw);
            odo.push(match objective {
                OdometryObjective::Forward => odometry_node(&mut tape, &tr.next, a, d, sim),
                OdometryObjective::Inverse => odometry_inverse_node(&mut tape, &tr.state, a, d, sim),
                OdometryObjective::Direct => direct_delta_node(&mut tape, &tr.state, &tr.next, d),
            });
        }
        if inv_weight > 0.0 {
            let raw = inverse_forward(&mut tape, &layout, h, a);
            let d = tape.ego_to_world(s, raw);
            inv.push(inverse_state_node(&mut tape, &tr.state, a, d, &tr.expert_next, sim));
        }
    }
    let losses = HeadLosses {
        odometry: odo.iter().map(|v| tape.scalar(*v)).sum(),
        inverse: inv.iter().map(|v| tape.scalar(*v)).sum(),
    };
    if !(losses.odometry.is_finite() && losses.inverse.is_finite()) {
        return Err(Error::NonFiniteLoss { scenario: 0, step: 0 });
    }
    let mut terms = odo.clone();
    let mut weights = vec![odo_weight; odo.len()];
    terms.extend(&inv);
    weights.extend(std::iter::repeat_n(inv_weight, inv.len()));
    if terms.is_empty() {
        return Ok((losses, GradientAccumulator::zeros_like(params)));
    }
    let total = tape.weighted_sum(&terms, &weights);
    let grads = tape.backward(total, &[1.0])?.params;
    Ok((losses, grads))
}
