//! Sampling model-predictive control with learned state predictors.
//!
//! Each step, `N` futures of `H` steps are imagined with the odometry head
//! (the simulator is never called), scored, and the first actions of the
//! best `k` are averaged into the executed action.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{inverse_step_unchecked, step_unchecked, Action, SimConfig, VehicleState, STATE_DIM};
use crate::error::{Error, Result};
use crate::eval::{step_rng, Observer};
use crate::losses::identified_offset;
use crate::metrics::{ade, TrajectoryEval};
use crate::nn::features::{encode, RouteConditioning};
use crate::nn::model::{ego_delta_to_world, Network};
use crate::nn::params::ModelParams;
use crate::parallel::Workers;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    NegDistToLog,
    PosDistToLog,
    NegInverseNorm,
}

impl RewardKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NegDistToLog => "neg-dist-to-log",
            Self::PosDistToLog => "pos-dist-to-log",
            Self::NegInverseNorm => "neg-inverse-norm",
        }
    }
}

impl std::str::FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "neg-dist-to-log" => Ok(Self::NegDistToLog),
            "pos-dist-to-log" => Ok(Self::PosDistToLog),
            "neg-inverse-norm" => Ok(Self::NegInverseNorm),
            _ => Err(format!("unknown reward kind {s:?}")),
        }
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub rollouts: usize,
    pub top_k: usize,
    pub horizon: usize,
    pub reward: RewardKind,
    pub seed: u64,
    pub route: RouteConditioning,
    pub sim: SimConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            rollouts: 8,
            top_k: 3,
            horizon: 10,
            reward: RewardKind::NegDistToLog,
            seed: 0,
            route: RouteConditioning::Heading,
            sim: SimConfig::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.rollouts {
            return Err(Error::Config(format!(
                "top-k must lie in 1..={} (got {})",
                self.rollouts, self.top_k
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// World-frame state change predicted for executing `a` at `s`.
pub trait OdometryModel {
    fn delta(&self, net: &Network<'_>, hidden: &[f64], s: &VehicleState, a: &Action) -> [f64; STATE_DIM];
}

/// The trained odometry head. Imagined states keep their velocity aligned
/// with their heading, as simulator states do.
#[derive(Debug, Clone, Copy, Default)]
pub struct LearnedOdometry;

impl OdometryModel for LearnedOdometry {
    fn delta(&self, net: &Network<'_>, hidden: &[f64], s: &VehicleState, a: &Action) -> [f64; STATE_DIM] {
        identified_offset(s, &ego_delta_to_world(s.yaw, &net.odometry(hidden, a)))
    }
}

/// Exact odometry from the simulator.
#[derive(Debug, Clone, Copy)]
pub struct OracleOdometry(pub SimConfig);

impl OdometryModel for OracleOdometry {
    fn delta(&self, _: &Network<'_>, _: &[f64], s: &VehicleState, a: &Action) -> [f64; STATE_DIM] {
        let n = step_unchecked(s, a, &self.0).to_array();
        let c = s.to_array();
        std::array::from_fn(|i| n[i] - c[i])
    }
}

/// Displacement from `s` to the state in which `a` is optimal at step `t`.
pub trait InverseModel {
    fn displacement(&self, net: &Network<'_>, hidden: &[f64], t: usize, s: &VehicleState, a: &Action) -> [f64; STATE_DIM];
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LearnedInverse;

impl InverseModel for LearnedInverse {
    fn displacement(&self, net: &Network<'_>, hidden: &[f64], _: usize, s: &VehicleState, a: &Action) -> [f64; STATE_DIM] {
        identified_offset(s, &ego_delta_to_world(s.yaw, &net.inverse(hidden, a)))
    }
}

/// Exact inverse state computed from the log.
#[derive(Debug, Clone, Copy)]
pub struct OracleInverse<'a> {
    pub scenario: &'a Scenario,
    pub sim: SimConfig,
}

impl InverseModel for OracleInverse<'_> {
    fn displacement(&self, _: &Network<'_>, _: &[f64], t: usize, s: &VehicleState, a: &Action) -> [f64; STATE_DIM] {
        let tilde = inverse_step_unchecked(self.scenario.expert_state(t + 1), a, &self.sim).to_array();
        let c = s.to_array();
        std::array::from_fn(|i| tilde[i] - c[i])
    }
}

/// Source of candidate actions during imagination.
pub trait ActionSampler {
    fn action(&mut self, tau: usize, net: &Network<'_>, hidden: &[f64], s: &VehicleState) -> Action;
}

/// Draws from the policy mixture.
pub struct PolicySampler(pub ChaCha8Rng);

impl ActionSampler for PolicySampler {
    fn action(&mut self, _: usize, net: &Network<'_>, hidden: &[f64], _: &VehicleState) -> Action {
        net.policy(hidden).sample(&mut self.0)
    }
}

/// Replays a fixed action sequence.
pub struct FixedActions(pub Vec<Action>);

impl ActionSampler for FixedActions {
    fn action(&mut self, tau: usize, _: &Network<'_>, _: &[f64], _: &VehicleState) -> Action {
        self.0[tau.min(self.0.len() - 1)]
    }
}

/// An imagined future starting at log step `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Imagined {
    pub start: usize,
    /// Start state followed by the `H` imagined states.
    pub states: Vec<VehicleState>,
    /// Clipped actions, one per imagined step.
    pub actions: Vec<Action>,
    /// Hidden state each action was chosen from.
    pub hiddens: Vec<Vec<f64>>,
}

impl Imagined {
    pub fn future(&self) -> &[VehicleState] {
        &self.states[1..]
    }
}

/// Roll the odometry model forward `horizon` steps from `s0`. Other agents
/// follow their logs; the hidden state advances on features re-encoded from
/// each imagined ego state.
#[allow(clippy::too_many_arguments)]
pub fn imagine(
    net: &Network<'_>,
    scn: &Scenario,
    start: usize,
    s0: &VehicleState,
    hidden0: &[f64],
    sampler: &mut dyn ActionSampler,
    odometry: &dyn OdometryModel,
    horizon: usize,
    route: RouteConditioning,
    sim: &SimConfig,
) -> Imagined {
    let mut s = *s0;
    let mut h = hidden0.to_vec();
    let mut out = Imagined {
        start,
        states: vec![s],
        actions: Vec::with_capacity(horizon),
        hiddens: Vec::with_capacity(horizon),
    };
    for tau in 0..horizon {
        let (a, _) = sim.clip(sampler.action(tau, net, &h, &s));
        let d = odometry.delta(net, &h, &s, &a);
        let c = s.to_array();
        s = VehicleState::from_slice(&std::array::from_fn::<f64, STATE_DIM, _>(|i| c[i] + d[i]));
        out.actions.push(a);
        out.hiddens.push(h.clone());
        out.states.push(s);
        if tau + 1 < horizon {
            let (f, _) = encode(scn, start + tau + 1, &s, route);
            h = net.core_step(&f.values, &h);
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Higher is better.
pub fn score(im: &Imagined, scn: &Scenario, net: &Network<'_>, inverse: &dyn InverseModel, reward: RewardKind) -> f64 {
    let dist = || -> f64 {
        im.future()
            .iter()
            .enumerate()
            .map(|(tau, s)| {
                let e = scn.expert_state(im.start + tau + 1);
                (s.x - e.x).hypot(s.y - e.y)
            })
            .sum()
    };
    match reward {
        RewardKind::NegDistToLog => -dist(),
        RewardKind::PosDistToLog => dist(),
        RewardKind::NegInverseNorm => -(0..im.actions.len())
            .map(|tau| norm(&inverse.displacement(net, &im.hiddens[tau], im.start + tau, &im.states[tau], &im.actions[tau])))
            .sum::<f64>(),
    }
}

/// Mean of the first actions of the `k` best-scoring candidates; ties in
/// score favour the lower index.
pub fn aggregate_top_k(scores: &[f64], first_actions: &[Action], k: usize) -> Action {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let k = k.min(order.len()).max(1);
    let (mut acc, mut cur) = (0.0, 0.0);
    for &i in &order[..k] {
        acc += first_actions[i].accel;
        cur += first_actions[i].curvature;
    }
    Action::new(acc / k as f64, cur / k as f64)
}

/// Learned or oracle predictors used by the controller.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub odometry: &'a dyn OdometryModel,
    pub inverse: &'a dyn InverseModel,
}

impl Default for Models<'_> {
    fn default() -> Self {
        Self {
            odometry: &LearnedOdometry,
            inverse: &LearnedInverse,
        }
    }
}

/// Candidate `n` at step `t` draws from the stream a reactive rollout `n`
/// would use at `t`, so `N = k = H = 1` reproduces reactive evaluation.
#[allow(clippy::too_many_arguments)]
pub fn mpc_step(
    net: &Network<'_>,
    hidden: &[f64],
    t: usize,
    s: &VehicleState,
    scn: &Scenario,
    scenario_id: usize,
    cfg: &MpcConfig,
    models: Models<'_>,
) -> Action {
    let mut scores = Vec::with_capacity(cfg.rollouts);
    let mut firsts = Vec::with_capacity(cfg.rollouts);
    for n in 0..cfg.rollouts {
        let mut sampler = PolicySampler(step_rng(cfg.seed, scenario_id, n, t));
        let im = imagine(
            net,
            scn,
            t,
            s,
            hidden,
            &mut sampler,
            models.odometry,
            cfg.horizon,
            cfg.route,
            &cfg.sim,
        );
        scores.push(score(&im, scn, net, models.inverse, cfg.reward));
        firsts.push(im.actions[0]);
    }
    cfg.sim.clip(aggregate_top_k(&scores, &firsts, cfg.top_k)).0
}

/// Closed-loop episode driven by [`mpc_step`].
pub fn mpc_episode(
    params: &ModelParams,
    scn: &Scenario,
    scenario_id: usize,
    cfg: &MpcConfig,
    models: Models<'_>,
) -> Vec<VehicleState> {
    let mut obs = Observer::new(params, cfg.route);
    let mut s = scn.expert.states[0];
    let mut states = vec![s];
    for t in 0..scn.len().saturating_sub(1) {
        obs.observe(scn, t, &s);
        let a = mpc_step(&obs.net, &obs.hidden, t, &s, scn, scenario_id, cfg, models);
        s = step_unchecked(&s, &a, &cfg.sim);
        states.push(s);
    }
    states
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcRow {
    pub scenario_id: usize,
    pub rollouts: usize,
    pub top_k: usize,
    pub horizon: usize,
    pub reward: RewardKind,
    pub eval: TrajectoryEval,
}

pub fn mpc_eval(params: &ModelParams, scenarios: &[Scenario], cfg: &MpcConfig, workers: &Workers) -> Result<Vec<MpcRow>> {
    cfg.validate()?;
    workers
        .map(scenarios, |i, scn| {
            let traj = mpc_episode(params, scn, i, cfg, Models::default());
            Ok(MpcRow {
                scenario_id: i,
                rollouts: cfg.rollouts,
                top_k: cfg.top_k,
                horizon: cfg.horizon,
                reward: cfg.reward,
                eval: TrajectoryEval::of(&traj, scn)?,
            })
        })
        .into_iter()
        .collect()
}

pub fn write_mpc_csv<W: Write>(rows: &[MpcRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scenario_id,n,k,h,reward,ade,overlap,offroad")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.scenario_id, r.rollouts, r.top_k, r.horizon, r.reward, r.eval.ade, r.eval.overlap as u8, r.eval.offroad as u8
        )?;
    }
    Ok(())
}

/// Parse `"N,k,H;N,k,H;..."`.
pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    s.split(';')
        .filter(|c| !c.trim().is_empty())
        .map(|cell| {
            let v: Vec<usize> = cell
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("grid cell {cell:?}: {e}")))?;
            match v.as_slice() {
                [n, k, h] => Ok((*n, *k, *h)),
                _ => Err(Error::Config(format!("grid cell {cell:?} needs N,k,H"))),
            }
        })
        .collect()
}

/// Mean imagination ADE for each horizon, measured against a reactive
/// rollout whose actions are replayed through the odometry model. Starts are
/// every `stride` steps where the longest horizon still fits.
pub fn imagination_ade(
    params: &ModelParams,
    scn: &Scenario,
    scenario_id: usize,
    horizons: &[usize],
    stride: usize,
    seed: u64,
    route: RouteConditioning,
    odometry: &dyn OdometryModel,
) -> Result<Vec<f64>> {
    let sim = SimConfig::default();
    let mut obs = Observer::new(params, route);
    let mut s = scn.expert.states[0];
    let (mut states, mut actions, mut hiddens) = (vec![s], Vec::new(), Vec::new());
    for t in 0..scn.len() - 1 {
        obs.observe(scn, t, &s);
        let mut rng = step_rng(seed, scenario_id, 0, t);
        let (a, _) = sim.clip(obs.net.policy(&obs.hidden).sample(&mut rng));
        hiddens.push(obs.hidden.clone());
        actions.push(a);
        s = step_unchecked(&s, &a, &sim);
        states.push(s);
    }
    let hmax = horizons.iter().copied().max().unwrap_or(1);
    let starts: Vec<usize> = (0..actions.len())
        .step_by(stride.max(1))
        .filter(|t| t + hmax <= actions.len())
        .collect();
    if starts.is_empty() {
        return Err(Error::Contract(format!("episode too short for horizon {hmax}")));
    }
    let net = Network::new(params);
    horizons
        .iter()
        .map(|&h| {
            let mut total = 0.0;
            for &t0 in &starts {
                let mut fixed = FixedActions(actions[t0..t0 + h].to_vec());
                let im = imagine(&net, scn, t0, &states[t0], &hiddens[t0], &mut fixed, odometry, h, route, &sim);
                total += ade(im.future(), &states[t0 + 1..=t0 + h])?;
            }
            Ok(total / starts.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{rollout, Driver, EvalConfig};
    use crate::nn::params::NetConfig;
    use crate::scenario::{generate_scenario, ScenarioKind};

    fn setup() -> (ModelParams, Scenario) {
        (
            ModelParams::random(NetConfig::default(), 3, 0.2),
            generate_scenario(ScenarioKind::Arc, 4),
        )
    }

    #[test]
    fn oracle_imagination_matches_simulation() {
        let (p, scn) = setup();
        let net = Network::new(&p);
        let sim = SimConfig::default();
        let acts: Vec<Action> = (0..12)
            .map(|i| Action::new(0.3 * i as f64 - 1.0, 0.01 * (i % 3) as f64))
            .collect();
        let s0 = scn.expert.states[5];
        let im = imagine(
            &net,
            &scn,
            5,
            &s0,
            &net.initial_hidden(),
            &mut FixedActions(acts.clone()),
            &OracleOdometry(sim),
            12,
            RouteConditioning::Heading,
            &sim,
        );
        let mut s = s0;
        for (i, a) in acts.iter().enumerate() {
            s = step_unchecked(&s, a, &sim);
            let d = im.future()[i].to_array();
            assert!(s.to_array().iter().zip(d).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn horizon_one_gives_one_state() {
        let (p, scn) = setup();
        let net = Network::new(&p);
        let sim = SimConfig::default();
        let mut smp = PolicySampler(step_rng(0, 0, 0, 0));
        let im = imagine(
            &net,
            &scn,
            0,
            &scn.expert.states[0],
            &net.initial_hidden(),
            &mut smp,
            &LearnedOdometry,
            1,
            RouteConditioning::Heading,
            &sim,
        );
        assert_eq!(im.future().len(), 1);
    }

    #[test]
    fn expert_scores_are_maximal() {
        let (p, scn) = setup();
        let net = Network::new(&p);
        let sim = SimConfig::default();
        let h = net.initial_hidden();
        let acts = scn.expert.actions[..10].to_vec();
        let im = imagine(
            &net,
            &scn,
            0,
            &scn.expert.states[0],
            &h,
            &mut FixedActions(acts),
            &OracleOdometry(sim),
            10,
            RouteConditioning::Heading,
            &sim,
        );
        assert!(score(&im, &scn, &net, &LearnedInverse, RewardKind::NegDistToLog).abs() < 1e-9);
        let inv = OracleInverse { scenario: &scn, sim };
        assert!(score(&im, &scn, &net, &inv, RewardKind::NegInverseNorm).abs() < 1e-9);
    }

    #[test]
    fn closer_candidate_scores_higher() {
        let (p, scn) = setup();
        let net = Network::new(&p);
        let mk = |off: f64| Imagined {
            start: 0,
            states: scn.expert.states[..4]
                .iter()
                .map(|s| VehicleState { x: s.x + off, ..*s })
                .collect(),
            actions: vec![Action::default(); 3],
            hiddens: vec![vec![]; 3],
        };
        let near = score(&mk(0.5), &scn, &net, &LearnedInverse, RewardKind::NegDistToLog);
        let far = score(&mk(1.5), &scn, &net, &LearnedInverse, RewardKind::NegDistToLog);
        assert!(near > far);
        assert_eq!(score(&mk(1.5), &scn, &net, &LearnedInverse, RewardKind::PosDistToLog), -far);
    }

    #[test]
    fn top_k_aggregation() {
        let acts: Vec<Action> = (0..8).map(|i| Action::new(i as f64, -(i as f64) * 0.01)).collect();
        let scores = [0.0, 5.0, -1.0, 5.0, 2.0, 7.0, f64::NEG_INFINITY, 1.0];
        let a = aggregate_top_k(&scores, &acts, 3);
        assert_eq!(a, Action::new((5.0 + 1.0 + 3.0) / 3.0, -(5.0 + 1.0 + 3.0) * 0.01 / 3.0));
        let mut inf = scores;
        inf[6] = f64::INFINITY;
        assert_eq!(aggregate_top_k(&inf, &acts, 1), acts[6]);
        // N = k: order irrelevant
        let all = aggregate_top_k(&scores, &acts, 8);
        assert!((all.accel - 3.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mpc_is_reactive() {
        let (p, scn) = setup();
        let cfg = MpcConfig {
            rollouts: 1,
            top_k: 1,
            horizon: 1,
            seed: 11,
            ..MpcConfig::default()
        };
        let a = mpc_episode(&p, &scn, 2, &cfg, Models::default());
        let b = rollout(
            Driver::Policy(&p),
            &scn,
            2,
            0,
            &EvalConfig {
                seed: 11,
                ..EvalConfig::default()
            },
        );
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_top_one_is_best_realized() {
        let (p, scn) = setup();
        let net = Network::new(&p);
        let sim = SimConfig::default();
        let h = net.initial_hidden();
        let s0 = scn.expert.states[0];
        let mut best = (f64::NEG_INFINITY, 0);
        let mut realized = Vec::new();
        for n in 0..6 {
            let mut smp = PolicySampler(step_rng(1, 0, n, 0));
            let im = imagine(
                &net,
                &scn,
                0,
                &s0,
                &h,
                &mut smp,
                &OracleOdometry(sim),
                5,
                RouteConditioning::Heading,
                &sim,
            );
            let sc = score(&im, &scn, &net, &LearnedInverse, RewardKind::NegDistToLog);
            if sc > best.0 {
                best = (sc, n);
            }
            let mut s = s0;
            let mut d = 0.0;
            for (tau, a) in im.actions.iter().enumerate() {
                s = step_unchecked(&s, a, &sim);
                let e = scn.expert_state(tau + 1);
                d += (s.x - e.x).hypot(s.y - e.y);
            }
            realized.push(d);
        }
        let argmin = (0..6).min_by(|a, b| realized[*a].total_cmp(&realized[*b])).unwrap();
        assert_eq!(best.1, argmin);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1,1,1; 8,3,10").unwrap(), vec![(1, 1, 1), (8, 3, 10)]);
        assert!(parse_grid("8,3").is_err());
        assert!(MpcConfig {
            rollouts: 2,
            top_k: 3,
            ..MpcConfig::default()
        }
        .validate()
        .is_err());
    }
}
