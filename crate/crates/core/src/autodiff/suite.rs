//! Finite-difference verification of every primitive and episode loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{gradcheck, GradcheckReport};
use super::tape::{Tape, Var};
use crate::dynamics::{step_unchecked, Action, SimConfig, VehicleState};
use crate::losses::{apg_episode, planner_episode, transition_losses, EpisodeConfig, OdometryObjective, Transition};
use crate::nn::features::{encode, RouteConditioning};
use crate::nn::model::{
    core_step, inverse_forward, odometry_forward, planner_forward, policy_forward, ACTION_SCALE, LOG_STD_OFFSET,
};
use crate::nn::params::{ModelParams, NetConfig, ParamGroup};
use crate::scenario::{generate_scenario, Scenario, ScenarioKind};
use crate::seeding::rng_for;

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const EPISODE_TOL: f64 = 1e-4;
const H: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub points: usize,
    pub primitive_tol: f64,
    pub episode_tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 10,
            primitive_tol: PRIMITIVE_TOL,
            episode_tol: EPISODE_TOL,
        }
    }
}

/// Whether a report belongs to a primitive or an episode composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Episode,
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub kind: CheckKind,
    pub point: usize,
    pub report: GradcheckReport,
}

fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState::from_pose(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(2.0..14.0),
    )
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    Action::new(rng.random_range(-4.0..4.0), rng.random_range(-0.2..0.2))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Check the input adjoints of `build` under a random output cotangent.
fn check_inputs<F>(
    name: &str,
    params: &ModelParams,
    inputs: Vec<Vec<f64>>,
    rng: &mut ChaCha8Rng,
    tol: f64,
    build: F,
) -> GradcheckReport
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let lens: Vec<usize> = inputs.iter().map(|v| v.len()).collect();
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone())).collect();
    let out = build(&mut tape, &vars);
    let g = random_vec(rng, tape.value(out).len(), 1.0);
    let back = tape.backward(out, &g).expect("seed matches output");
    let analytic: Vec<f64> = vars.iter().flat_map(|v| back.input(*v).to_vec()).collect();
    let flat: Vec<f64> = inputs.concat();
    let f = |x: &[f64]| {
        let mut tape = Tape::new(params);
        let mut off = 0;
        let vars: Vec<Var> = lens
            .iter()
            .map(|n| {
                let v = tape.input(x[off..off + n].to_vec());
                off += n;
                v
            })
            .collect();
        let out = build(&mut tape, &vars);
        tape.value(out).iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    gradcheck(name, f, &flat, &analytic, None, H, tol)
}

fn group_coords(params: &ModelParams, groups: &[ParamGroup]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut off = 0;
    for t in params.tensors() {
        if groups.contains(&t.group) {
            out.extend(off..off + t.data.len());
        }
        off += t.data.len();
    }
    out
}

fn flat_params(params: &ModelParams) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
}

/// Check parameter gradients of a scalar program over `groups`.
fn check_params<L, G>(name: &str, params: &ModelParams, groups: &[ParamGroup], tol: f64, loss: L, grad: G) -> GradcheckReport
where
    L: Fn(&ModelParams) -> f64,
    G: Fn(&ModelParams) -> Vec<f64>,
{
    let coords = group_coords(params, groups);
    let analytic = grad(params);
    let point = flat_params(params);
    let f = |x: &[f64]| {
        let mut p = params.clone();
        for &i in &coords {
            p.set_scalar(i, x[i]);
        }
        loss(&p)
    };
    gradcheck(name, f, &point, &analytic, Some(&coords), H, tol)
}

fn scene(rng: &mut ChaCha8Rng) -> (Scenario, usize) {
    let kind = ScenarioKind::ALL[rng.random_range(0..ScenarioKind::ALL.len())];
    let scn = generate_scenario(kind, rng.random());
    let t = rng.random_range(0..scn.len() - 5);
    (scn, t)
}

fn primitives(point: usize, cfg: &SuiteConfig, out: &mut Vec<SuiteEntry>) {
    let mut rng = rng_for(&[cfg.seed, 0x9c, point as u64]);
    let tol = cfg.primitive_tol;
    let tiny = NetConfig::tiny();
    let params = ModelParams::random(tiny, rng.random(), 0.5);
    let layout = params.layout();
    let mut push = |report| {
        out.push(SuiteEntry {
            kind: CheckKind::Primitive,
            point,
            report,
        })
    };

    let s = random_state(&mut rng);
    let a = random_action(&mut rng);
    for (label, sim) in [("step", SimConfig::default()), ("step/unclipped", SimConfig::unclipped())] {
        push(check_inputs(
            label,
            &params,
            vec![s.to_array().to_vec(), a.to_array().to_vec()],
            &mut rng,
            tol,
            |t, v| t.step(v[0], v[1], sim),
        ));
    }
    let n = step_unchecked(&s, &a, &SimConfig::default());
    push(check_inputs(
        "inverse_step",
        &params,
        vec![n.to_array().to_vec(), a.to_array().to_vec()],
        &mut rng,
        tol,
        |t, v| t.inverse_step(v[0], v[1], SimConfig::default()),
    ));
    let target = step_unchecked(&s, &random_action(&mut rng), &SimConfig::unclipped());
    for (label, sim) in [
        ("inv_kin", SimConfig::default()),
        ("inv_kin/unclipped", SimConfig::unclipped()),
    ] {
        push(check_inputs(
            label,
            &params,
            vec![s.to_array().to_vec(), target.to_array().to_vec()],
            &mut rng,
            tol,
            |t, v| t.inv_kin(v[0], v[1], sim),
        ));
    }
    push(check_inputs(
        "ego_to_world",
        &params,
        vec![s.to_array().to_vec(), random_vec(&mut rng, 5, 1.0)],
        &mut rng,
        tol,
        |t, v| t.ego_to_world(v[0], v[1]),
    ));

    let (scn, t0) = scene(&mut rng);
    let route = [
        RouteConditioning::Heading,
        RouteConditioning::Waypoint,
        RouteConditioning::None,
    ][point % 3];
    let es = scn.expert.states[t0];
    push(check_inputs(
        "encode",
        &params,
        vec![es.to_array().to_vec()],
        &mut rng,
        tol,
        |t, v| {
            let (_, saved) = encode(&scn, t0, &t.state(v[0]), route);
            t.encode(v[0], saved)
        },
    ));

    let feat = random_vec(&mut rng, tiny.feature_len, 1.0);
    let hid = random_vec(&mut rng, tiny.hidden, 0.8);
    push(check_inputs(
        "core_step",
        &params,
        vec![feat.clone(), hid.clone()],
        &mut rng,
        tol,
        |t, v| core_step(t, &layout, v[0], v[1]),
    ));
    let raw = random_vec(&mut rng, tiny.policy_out(), 1.0);
    let comp = rng.random_range(0..tiny.mixture);
    let eps = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    push(check_inputs(
        "mixture_sample",
        &params,
        vec![raw.clone()],
        &mut rng,
        tol,
        |t, v| t.mixture_sample(v[0], comp, eps, ACTION_SCALE, LOG_STD_OFFSET),
    ));
    push(check_inputs(
        "mixture_nll",
        &params,
        vec![raw.clone()],
        &mut rng,
        tol,
        |t, v| t.mixture_nll(v[0], comp),
    ));
    let logged = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    push(check_inputs("gaussian_nll", &params, vec![raw], &mut rng, tol, |t, v| {
        t.gaussian_nll(v[0], comp, logged, LOG_STD_OFFSET)
    }));
    let tgt = random_vec(&mut rng, 5, 3.0);
    push(check_inputs(
        "sq_dist",
        &params,
        vec![random_vec(&mut rng, 5, 3.0)],
        &mut rng,
        tol,
        |t, v| t.sq_dist(v[0], &tgt),
    ));

    let act = a.to_array().to_vec();
    push(check_inputs(
        "policy_head",
        &params,
        vec![hid.clone()],
        &mut rng,
        tol,
        |t, v| policy_forward(t, &layout, v[0]),
    ));
    push(check_inputs(
        "planner_head",
        &params,
        vec![hid.clone()],
        &mut rng,
        tol,
        |t, v| planner_forward(t, &layout, v[0]),
    ));
    push(check_inputs(
        "odometry_head",
        &params,
        vec![hid.clone(), act.clone()],
        &mut rng,
        tol,
        |t, v| odometry_forward(t, &layout, v[0], v[1]),
    ));
    push(check_inputs(
        "inverse_head",
        &params,
        vec![hid.clone(), act],
        &mut rng,
        tol,
        |t, v| inverse_forward(t, &layout, v[0], v[1]),
    ));

    // Parameter gradients of the network pieces.
    let g = random_vec(&mut rng, tiny.hidden, 1.0);
    let net_loss = |p: &ModelParams| -> (f64, Vec<f64>) {
        let mut t = Tape::new(p);
        let l = p.layout();
        let f = t.constant(feat.clone());
        let h = t.constant(hid.clone());
        let h2 = core_step(&mut t, &l, f, h);
        let a = t.constant(vec![0.5, 0.02]);
        let pol = policy_forward(&mut t, &l, h2);
        let odo = odometry_forward(&mut t, &l, h2, a);
        let pla = planner_forward(&mut t, &l, h2);
        let inv = inverse_forward(&mut t, &l, h2, a);
        let mut terms = Vec::new();
        for v in [pol, odo, pla, inv] {
            let w: Vec<f64> = (0..t.value(v).len()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
            terms.push(t.weighted_sq_dist(v, &vec![0.1; w.len()], &w.iter().map(|x| x.abs() + 0.1).collect::<Vec<_>>()));
        }
        let hv: f64 = t.value(h2).iter().zip(&g).map(|(a, b)| a * b).sum();
        let s = t.sum(&terms);
        let total = t.scalar(s) + hv;
        let mut grads = t.backward(s, &[1.0]).unwrap().params;
        // hidden-state functional, second pass
        let hb = t.backward(h2, &g).unwrap().params;
        grads.add_scaled(&hb, 1.0);
        (total, grads.flat())
    };
    push(check_params(
        "network_params",
        &params,
        &ParamGroup::ALL,
        tol,
        |p| net_loss(p).0,
        |p| net_loss(p).1,
    ));
}

fn episodes(point: usize, cfg: &SuiteConfig, out: &mut Vec<SuiteEntry>) {
    let mut rng = rng_for(&[cfg.seed, 0xe9, point as u64]);
    let tol = cfg.episode_tol;
    let params = ModelParams::random(NetConfig::tiny(), rng.random(), 0.5);
    let (scn, _) = scene(&mut rng);
    let rng_seed: u64 = rng.random();
    let mut push = |report| {
        out.push(SuiteEntry {
            kind: CheckKind::Episode,
            point,
            report,
        })
    };

    let apg = EpisodeConfig {
        horizon: Some(3),
        ..EpisodeConfig::default()
    };
    let run_apg = |p: &ModelParams| apg_episode(p, &scn, 0, &apg, &mut rng_for(&[rng_seed])).expect("finite");
    push(check_params(
        "apg_episode",
        &params,
        &[ParamGroup::Encoder, ParamGroup::Core, ParamGroup::Policy],
        tol,
        |p| run_apg(p).loss,
        |p| run_apg(p).grads.flat(),
    ));

    let plan = EpisodeConfig {
        sim: SimConfig::unclipped(),
        nll_weight: 0.0,
        horizon: Some(3),
        ..EpisodeConfig::default()
    };
    let run_plan = |p: &ModelParams| planner_episode(p, &scn, 0, &plan).expect("finite");
    push(check_params(
        "planner_episode",
        &params,
        &[ParamGroup::Planner],
        tol,
        |p| run_plan(p).loss,
        |p| run_plan(p).grads.flat(),
    ));

    // Transitions from a short perturbed replay of the log.
    let sim = SimConfig::default();
    let mut s = scn.expert.states[0];
    let mut transitions = Vec::new();
    for t in 0..3 {
        let a = scn.expert.actions[t];
        let a = Action::new(
            a.accel + rng.random_range(-1.0..1.0),
            a.curvature + rng.random_range(-0.02..0.02),
        );
        let next = step_unchecked(&s, &a, &sim);
        transitions.push(Transition {
            state: s,
            action: a,
            next,
            expert_next: scn.expert.states[t + 1],
            hidden: random_vec(&mut rng, params.config().hidden, 0.8),
        });
        s = next;
    }
    for (label, obj) in [
        ("odometry_forward_loss", OdometryObjective::Forward),
        ("odometry_inverse_loss", OdometryObjective::Inverse),
        ("odometry_direct_loss", OdometryObjective::Direct),
    ] {
        let run = |p: &ModelParams| transition_losses(p, &transitions, obj, 1.0, 0.7, sim).expect("finite");
        push(check_params(
            label,
            &params,
            &[ParamGroup::Odometry, ParamGroup::Inverse],
            tol,
            |p| {
                let (l, _) = run(p);
                l.odometry + 0.7 * l.inverse
            },
            |p| run(p).1.flat(),
        ));
    }
}

/// Every check at `cfg.points` seeded random points.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<SuiteEntry> {
    let mut out = Vec::new();
    for point in 0..cfg.points {
        primitives(point, cfg, &mut out);
        episodes(point, cfg, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_passes() {
        let entries = run_suite(&SuiteConfig {
            points: 1,
            ..SuiteConfig::default()
        });
        for e in &entries {
            assert!(e.report.passed(), "{}", e.report);
        }
        assert!(entries.iter().any(|e| e.kind == CheckKind::Episode));
    }
}
