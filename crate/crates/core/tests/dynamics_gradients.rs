use awm::autodiff::gradcheck;
use awm::dynamics::{
    inv_kin, inv_kin_vjp, inverse_step, inverse_step_vjp, step, step_vjp, wrap_angle, Action, SimConfig, VehicleState, STATE_DIM,
};
use awm::seeding::rng_for;
use proptest::prelude::*;
use rand::Rng;

const POINTS: usize = 20;
const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn state_from(v: &[f64]) -> VehicleState {
    VehicleState::from_slice(&v[..STATE_DIM])
}

fn random_state(rng: &mut impl Rng) -> VehicleState {
    // Velocity not aligned with yaw on purpose: the VJPs must handle any
    // (vx, vy), not only consistent states.
    VehicleState::new(
        rng.random_range(-30.0..30.0),
        rng.random_range(-30.0..30.0),
        rng.random_range(-12.0..12.0),
        rng.random_range(-12.0..12.0),
        rng.random_range(-3.0..3.0),
    )
}

fn random_action(rng: &mut impl Rng) -> Action {
    Action::new(rng.random_range(-5.0..5.0), rng.random_range(-0.25..0.25))
}

fn cotangent(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn step_vjp_matches_finite_differences() {
    for i in 0..POINTS {
        let mut rng = rng_for(&[11, i as u64]);
        let (s, a) = (random_state(&mut rng), random_action(&mut rng));
        let g = cotangent(&mut rng, STATE_DIM);
        for cfg in [SimConfig::default(), SimConfig::unclipped()] {
            let (gs, ga) = step_vjp(&s, &a, &cfg, &g.clone().try_into().unwrap());
            let point: Vec<f64> = s.to_array().into_iter().chain(a.to_array()).collect();
            let analytic: Vec<f64> = gs.into_iter().chain(ga).collect();
            let f = |x: &[f64]| {
                dot(
                    &step(&state_from(x), &Action::from_slice(&x[STATE_DIM..]), &cfg)
                        .unwrap()
                        .to_array(),
                    &g,
                )
            };
            let r = gradcheck("step", f, &point, &analytic, None, H, TOL);
            assert!(r.passed(), "point {i}: {r}");
        }
    }
}

#[test]
fn inverse_step_vjp_matches_finite_differences() {
    for i in 0..POINTS {
        let mut rng = rng_for(&[12, i as u64]);
        let (s, a) = (random_state(&mut rng), random_action(&mut rng));
        let g = cotangent(&mut rng, STATE_DIM);
        let cfg = SimConfig::default();
        let (gs, ga) = inverse_step_vjp(&s, &a, &cfg, &g.clone().try_into().unwrap());
        let point: Vec<f64> = s.to_array().into_iter().chain(a.to_array()).collect();
        let analytic: Vec<f64> = gs.into_iter().chain(ga).collect();
        let f = |x: &[f64]| {
            dot(
                &inverse_step(&state_from(x), &Action::from_slice(&x[STATE_DIM..]), &cfg)
                    .unwrap()
                    .to_array(),
                &g,
            )
        };
        let r = gradcheck("inverse_step", f, &point, &analytic, None, H, TOL);
        assert!(r.passed(), "point {i}: {r}");
    }
}

#[test]
fn inv_kin_vjp_matches_finite_differences() {
    for i in 0..POINTS {
        let mut rng = rng_for(&[13, i as u64]);
        let s = VehicleState::from_pose(
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(1.0..14.0),
        );
        let target = step(&s, &random_action(&mut rng), &SimConfig::unclipped()).unwrap();
        let g = cotangent(&mut rng, 2);
        for cfg in [SimConfig::default(), SimConfig::unclipped()] {
            let (gs, gt) = inv_kin_vjp(&s, &target, &cfg, &[g[0], g[1]]);
            let point: Vec<f64> = s.to_array().into_iter().chain(target.to_array()).collect();
            let analytic: Vec<f64> = gs.into_iter().chain(gt).collect();
            let f = |x: &[f64]| {
                dot(
                    &inv_kin(&state_from(x), &state_from(&x[STATE_DIM..]), &cfg)
                        .unwrap()
                        .to_array(),
                    &g,
                )
            };
            let r = gradcheck("inv_kin", f, &point, &analytic, None, H, TOL);
            assert!(r.passed(), "point {i}: {r}");
        }
    }
}

#[test]
fn suite_passes_at_ten_points() {
    let entries = awm::autodiff::suite::run_suite(&awm::autodiff::suite::SuiteConfig::default());
    let names: std::collections::BTreeSet<&str> = entries.iter().map(|e| e.report.name.as_str()).collect();
    for required in [
        "step",
        "inverse_step",
        "inv_kin",
        "core_step",
        "policy_head",
        "apg_episode",
        "planner_episode",
    ] {
        assert!(names.contains(required), "missing check {required}");
    }
    for e in &entries {
        assert!(e.report.passed(), "point {}: {}", e.point, e.report);
    }
}

fn pose() -> impl Strategy<Value = VehicleState> {
    (-50.0..50.0f64, -50.0..50.0f64, -3.1..3.1f64, 0.5..15.0f64).prop_map(|(x, y, yaw, v)| VehicleState::from_pose(x, y, yaw, v))
}

fn action() -> impl Strategy<Value = Action> {
    (-5.9..5.9f64, -0.29..0.29f64).prop_map(|(a, k)| Action::new(a, k))
}

proptest! {
    #[test]
    fn inverse_step_undoes_step(s in pose(), a in action()) {
        let cfg = SimConfig::default();
        let back = inverse_step(&step(&s, &a, &cfg).unwrap(), &a, &cfg).unwrap();
        for (u, v) in back.to_array().iter().zip(s.to_array()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn inv_kin_recovers_action(s in pose(), a in action()) {
        let cfg = SimConfig::default();
        let next = step(&s, &a, &cfg).unwrap();
        // Recovery needs a non-degenerate arc and a speed that stays positive.
        prop_assume!(next.speed() > 0.1);
        let r = inv_kin(&s, &next, &cfg).unwrap();
        prop_assert!((r.accel - a.accel).abs() < 1e-9);
        prop_assert!((r.curvature - a.curvature).abs() < 1e-9);
    }

    #[test]
    fn step_commutes_with_translation(s in pose(), a in action(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let cfg = SimConfig::default();
        let moved = VehicleState::new(s.x + dx, s.y + dy, s.vx, s.vy, s.yaw);
        let n1 = step(&s, &a, &cfg).unwrap();
        let n2 = step(&moved, &a, &cfg).unwrap();
        prop_assert!((n2.x - n1.x - dx).abs() < 1e-9);
        prop_assert!((n2.y - n1.y - dy).abs() < 1e-9);
        prop_assert!((n2.yaw - n1.yaw).abs() < 1e-12);
    }

    #[test]
    fn step_keeps_velocity_aligned_with_yaw(s in pose(), a in action()) {
        let n = step(&s, &a, &SimConfig::default()).unwrap();
        prop_assert!(n.is_consistent());
    }

    #[test]
    fn clipping_bounds_actions(acc in -50.0..50.0f64, k in -2.0..2.0f64) {
        let cfg = SimConfig::default();
        let (c, _) = cfg.clip(Action::new(acc, k));
        prop_assert!(c.accel.abs() <= cfg.accel_max && c.curvature.abs() <= cfg.curvature_max);
    }

    #[test]
    fn wrap_angle_lands_in_half_open_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((a - w) / std::f64::consts::TAU).fract().abs() < 1e-9 || (1.0 - ((a - w) / std::f64::consts::TAU).fract().abs()) < 1e-9);
    }
}
