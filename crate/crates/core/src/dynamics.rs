//! Invertible kinematic bicycle dynamics.
//!
//! The forward step integrates a constant-acceleration, constant-curvature
//! motion over one tick:
//!
//! ```text
//! v     = vx cos(yaw) + vy sin(yaw)
//! arc   = v dt + 0.5 accel dt^2
//! yaw'  = yaw + curvature * arc
//! x'    = x + arc cos(yaw),  y' = y + arc sin(yaw)
//! v'    = v + accel dt,      (vx', vy') = v' (cos yaw', sin yaw')
//! ```
//!
//! Every map here has a closed-form inverse and a hand-derived vector-Jacobian
//! product, which the training code chains through whole rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_ACCEL_MAX: f64 = 6.0;
pub const DEFAULT_CURVATURE_MAX: f64 = 0.3;
pub const DEFAULT_ARC_EPSILON: f64 = 1e-6;

/// Tolerance used by [`VehicleState::is_consistent`].
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Ego vehicle state `(x, y, vx, vy, yaw)`. Yaw is kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64, yaw: f64) -> Self {
        Self { x, y, vx, vy, yaw }
    }

    /// A consistent state moving at signed speed `speed` along `yaw`.
    pub fn from_pose(x: f64, y: f64, yaw: f64, speed: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self::new(x, y, speed * c, speed * s, yaw)
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.vx, self.vy, self.yaw]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// Signed speed: projection of the velocity onto the heading.
    pub fn speed(&self) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        self.vx * c + self.vy * s
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_consistent(&self) -> bool {
        let v = self.speed();
        let (s, c) = self.yaw.sin_cos();
        (self.vx - v * c).abs() < CONSISTENCY_TOL && (self.vy - v * s).abs() < CONSISTENCY_TOL
    }
}

/// Longitudinal acceleration and path curvature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub accel: f64,
    pub curvature: f64,
}

impl Action {
    pub const fn new(accel: f64, curvature: f64) -> Self {
        Self { accel, curvature }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.accel, self.curvature]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.accel.is_finite() && self.curvature.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub clip_actions: bool,
    pub arc_epsilon: f64,
    pub accel_max: f64,
    pub curvature_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            clip_actions: true,
            arc_epsilon: DEFAULT_ARC_EPSILON,
            accel_max: DEFAULT_ACCEL_MAX,
            curvature_max: DEFAULT_CURVATURE_MAX,
        }
    }
}

impl SimConfig {
    pub fn unclipped() -> Self {
        Self {
            clip_actions: false,
            ..Self::default()
        }
    }

    pub fn with_clipping(self, clip_actions: bool) -> Self {
        Self { clip_actions, ..self }
    }

    /// Clip `a` if clipping is on. The mask reports which channels pass
    /// through with unit slope (false = saturated, zero slope).
    pub fn clip(&self, a: Action) -> (Action, [bool; ACTION_DIM]) {
        if !self.clip_actions {
            return (a, [true, true]);
        }
        let accel = a.accel.clamp(-self.accel_max, self.accel_max);
        let curvature = a.curvature.clamp(-self.curvature_max, self.curvature_max);
        (
            Action::new(accel, curvature),
            [a.accel.abs() < self.accel_max, a.curvature.abs() < self.curvature_max],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Maps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn check_finite(s: &VehicleState, a: Option<&Action>) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::Domain(format!("non-finite state {s:?}")));
    }
    if let Some(a) = a {
        if !a.is_finite() {
            return Err(Error::Domain(format!("non-finite action {a:?}")));
        }
    }
    Ok(())
}

/// Forward simulator step.
pub fn step(s: &VehicleState, a: &Action, cfg: &SimConfig) -> Result<VehicleState> {
    check_finite(s, Some(a))?;
    Ok(step_unchecked(s, a, cfg))
}

pub(crate) fn step_unchecked(s: &VehicleState, a: &Action, cfg: &SimConfig) -> VehicleState {
    let (a, _) = cfg.clip(*a);
    let dt = cfg.dt;
    let (sy, cy) = s.yaw.sin_cos();
    let v = s.vx * cy + s.vy * sy;
    let v_next = v + a.accel * dt;
    let arc = v * dt + 0.5 * a.accel * dt * dt;
    let yaw_next = s.yaw + a.curvature * arc;
    let (sn, cn) = yaw_next.sin_cos();
    VehicleState {
        x: s.x + arc * cy,
        y: s.y + arc * sy,
        vx: v_next * cn,
        vy: v_next * sn,
        yaw: yaw_next,
    }
}

/// Exact inverse of [`step`] for the same action: `inverse_step(step(s, a), a) == s`
/// for consistent `s`.
pub fn inverse_step(s_next: &VehicleState, a: &Action, cfg: &SimConfig) -> Result<VehicleState> {
    check_finite(s_next, Some(a))?;
    Ok(inverse_step_unchecked(s_next, a, cfg))
}

pub(crate) fn inverse_step_unchecked(s_next: &VehicleState, a: &Action, cfg: &SimConfig) -> VehicleState {
    let (a, _) = cfg.clip(*a);
    let dt = cfg.dt;
    let (sn, cn) = s_next.yaw.sin_cos();
    let v_next = s_next.vx * cn + s_next.vy * sn;
    let v = v_next - a.accel * dt;
    let arc = v * dt + 0.5 * a.accel * dt * dt;
    let yaw = s_next.yaw - a.curvature * arc;
    let (sy, cy) = yaw.sin_cos();
    VehicleState {
        x: s_next.x - arc * cy,
        y: s_next.y - arc * sy,
        vx: v * cy,
        vy: v * sy,
        yaw,
    }
}

/// Action that moves `s` to `target` in one step (exactly, when the target
/// is reachable). Curvature falls back to zero on a vanishing arc.
pub fn inv_kin(s: &VehicleState, target: &VehicleState, cfg: &SimConfig) -> Result<Action> {
    check_finite(s, None)?;
    check_finite(target, None)?;
    Ok(inv_kin_unchecked(s, target, cfg))
}

pub(crate) fn inv_kin_unchecked(s: &VehicleState, target: &VehicleState, cfg: &SimConfig) -> Action {
    let raw = inv_kin_raw(s, target, cfg);
    cfg.clip(raw).0
}

fn inv_kin_raw(s: &VehicleState, target: &VehicleState, cfg: &SimConfig) -> Action {
    let dt = cfg.dt;
    let v = s.speed();
    let v_tgt = target.speed();
    let accel = (v_tgt - v) / dt;
    let arc = v * dt + 0.5 * accel * dt * dt;
    let curvature = if arc.abs() > cfg.arc_epsilon {
        wrap_angle(target.yaw - s.yaw) / arc
    } else {
        0.0
    };
    Action::new(accel, curvature)
}

/// `upstream^T d step / d(s, a)`. Saturated action channels get zero gradient.
pub fn step_vjp(
    s: &VehicleState,
    a: &Action,
    cfg: &SimConfig,
    upstream: &[f64; STATE_DIM],
) -> ([f64; STATE_DIM], [f64; ACTION_DIM]) {
    let (ac, pass) = cfg.clip(*a);
    let dt = cfg.dt;
    let [gx, gy, gvx, gvy, gyaw] = *upstream;

    let (sy, cy) = s.yaw.sin_cos();
    let v = s.vx * cy + s.vy * sy;
    let v_next = v + ac.accel * dt;
    let arc = v * dt + 0.5 * ac.accel * dt * dt;
    let yaw_next = s.yaw + ac.curvature * arc;
    let (sn, cn) = yaw_next.sin_cos();

    let g_vnext = gvx * cn + gvy * sn;
    let g_yawnext = gyaw - gvx * v_next * sn + gvy * v_next * cn;
    let g_arc = gx * cy + gy * sy + g_yawnext * ac.curvature;
    let g_curv = g_yawnext * arc;
    let g_v = g_vnext + g_arc * dt;
    let g_accel = g_vnext * dt + g_arc * 0.5 * dt * dt;
    let dv_dyaw = -s.vx * sy + s.vy * cy;
    let g_yaw = -gx * arc * sy + gy * arc * cy + g_yawnext + g_v * dv_dyaw;

    let grad_s = [gx, gy, g_v * cy, g_v * sy, g_yaw];
    let grad_a = [if pass[0] { g_accel } else { 0.0 }, if pass[1] { g_curv } else { 0.0 }];
    (grad_s, grad_a)
}

/// `upstream^T d inverse_step / d(s_next, a)`.
pub fn inverse_step_vjp(
    s_next: &VehicleState,
    a: &Action,
    cfg: &SimConfig,
    upstream: &[f64; STATE_DIM],
) -> ([f64; STATE_DIM], [f64; ACTION_DIM]) {
    let (ac, pass) = cfg.clip(*a);
    let dt = cfg.dt;
    let [gx, gy, gvx, gvy, gyaw] = *upstream;

    let (sn, cn) = s_next.yaw.sin_cos();
    let v_next = s_next.vx * cn + s_next.vy * sn;
    let v = v_next - ac.accel * dt;
    let arc = v * dt + 0.5 * ac.accel * dt * dt;
    let yaw = s_next.yaw - ac.curvature * arc;
    let (sy, cy) = yaw.sin_cos();

    // Adjoint of yaw (the recovered one), collecting every use.
    let g_yaw = gyaw + gx * arc * sy - gy * arc * cy - gvx * v * sy + gvy * v * cy;
    let g_arc = -gx * cy - gy * sy - g_yaw * ac.curvature;
    let g_curv = -g_yaw * arc;
    let g_v = gvx * cy + gvy * sy + g_arc * dt;
    let g_accel = g_arc * 0.5 * dt * dt - g_v * dt;
    let g_vnext = g_v;
    let dvn_dyaw = -s_next.vx * sn + s_next.vy * cn;

    let grad_s = [gx, gy, g_vnext * cn, g_vnext * sn, g_yaw + g_vnext * dvn_dyaw];
    let grad_a = [if pass[0] { g_accel } else { 0.0 }, if pass[1] { g_curv } else { 0.0 }];
    (grad_s, grad_a)
}

/// `upstream^T d inv_kin / d(s, target)`. The zero-arc fallback and
/// saturated channels contribute zero gradient.
pub fn inv_kin_vjp(
    s: &VehicleState,
    target: &VehicleState,
    cfg: &SimConfig,
    upstream: &[f64; ACTION_DIM],
) -> ([f64; STATE_DIM], [f64; STATE_DIM]) {
    let dt = cfg.dt;
    let raw = inv_kin_raw(s, target, cfg);
    let (_, pass) = cfg.clip(raw);
    let g_accel = if pass[0] { upstream[0] } else { 0.0 };
    let g_curv = if pass[1] { upstream[1] } else { 0.0 };

    let v = s.speed();
    let v_tgt = target.speed();
    let arc = 0.5 * (v + v_tgt) * dt;

    let mut g_v = -g_accel / dt;
    let mut g_vt = g_accel / dt;
    let mut g_yaw = 0.0;
    let mut g_yaw_t = 0.0;
    if arc.abs() > cfg.arc_epsilon {
        let dyaw = wrap_angle(target.yaw - s.yaw);
        let g_dyaw = g_curv / arc;
        let g_arc = -g_curv * dyaw / (arc * arc);
        g_yaw -= g_dyaw;
        g_yaw_t += g_dyaw;
        g_v += 0.5 * dt * g_arc;
        g_vt += 0.5 * dt * g_arc;
    }

    let speed_grad = |st: &VehicleState, g: f64, g_yaw: f64| {
        let (sy, cy) = st.yaw.sin_cos();
        [0.0, 0.0, g * cy, g * sy, g_yaw + g * (-st.vx * sy + st.vy * cy)]
    };
    (speed_grad(s, g_v, g_yaw), speed_grad(target, g_vt, g_yaw_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_consistent(rng: &mut ChaCha8Rng) -> VehicleState {
        VehicleState::from_pose(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(0.5..15.0),
        )
    }

    fn random_action(rng: &mut ChaCha8Rng) -> Action {
        Action::new(rng.random_range(-5.0..5.0), rng.random_range(-0.25..0.25))
    }

    #[test]
    fn straight_constant_speed() {
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let n = step(&s, &Action::default(), &SimConfig::default()).unwrap();
        assert_abs_diff_eq!(n.x, 0.1, epsilon = 1e-15);
        assert_eq!((n.y, n.vx, n.vy, n.yaw), (0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn accelerating_turn_matches_hand_evaluation() {
        // arc = 1*0.1 + 0.5*2*0.01 = 0.11, yaw' = 0.5*0.11, v' = 1.2
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let n = step(&s, &Action::new(2.0, 0.5), &SimConfig::unclipped()).unwrap();
        assert_abs_diff_eq!(n.x, 0.11, epsilon = 1e-15);
        assert_abs_diff_eq!(n.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.yaw, 0.055, epsilon = 1e-15);
        assert_abs_diff_eq!(n.vx, 1.2 * 0.055f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(n.vy, 1.2 * 0.055f64.sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(n.speed(), 1.2, epsilon = 1e-15);
    }

    #[test]
    fn zero_arc_leaves_state_unchanged() {
        let s = VehicleState::default();
        let n = step(&s, &Action::new(0.0, 0.3), &SimConfig::default()).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let cfg = SimConfig::default();
        let s = VehicleState::new(f64::NAN, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(step(&s, &Action::default(), &cfg), Err(Error::Domain(_))));
        let ok = VehicleState::default();
        let a = Action::new(f64::INFINITY, 0.0);
        assert!(step(&ok, &a, &cfg).is_err());
        assert!(inverse_step(&ok, &a, &cfg).is_err());
        assert!(inv_kin(&ok, &s, &cfg).is_err());
    }

    #[test]
    fn inverse_step_examples() {
        let cfg = SimConfig::unclipped();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let a = Action::new(2.0, 0.5);
        let back = inverse_step(&step(&s, &a, &cfg).unwrap(), &a, &cfg).unwrap();
        for (u, v) in back.to_array().iter().zip(s.to_array()) {
            assert_abs_diff_eq!(*u, v, epsilon = 1e-12);
        }
        let p = inverse_step(&VehicleState::new(0.1, 0.0, 1.0, 0.0, 0.0), &Action::default(), &cfg).unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-15);
        assert_eq!((p.y, p.vx, p.vy, p.yaw), (0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn round_trip_a_random() {
        let cfg = SimConfig::unclipped();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let s = random_consistent(&mut rng);
            let a = random_action(&mut rng);
            let n = step(&s, &a, &cfg).unwrap();
            assert!(n.is_consistent());
            let back = inverse_step(&n, &a, &cfg).unwrap();
            for (u, v) in back.to_array().iter().zip(s.to_array()) {
                worst = worst.max((u - v).abs());
            }
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    #[test]
    fn inv_kin_examples() {
        let cfg = SimConfig::unclipped();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let a = Action::new(2.0, 0.5);
        let r = inv_kin(&s, &step(&s, &a, &cfg).unwrap(), &cfg).unwrap();
        assert_abs_diff_eq!(r.accel, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.curvature, 0.5, epsilon = 1e-12);
        assert_eq!(inv_kin(&s, &s, &cfg).unwrap(), Action::new(0.0, 0.0));
    }

    #[test]
    fn round_trip_b_random() {
        let cfg = SimConfig::unclipped();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        let mut n = 0;
        while n < 1000 {
            let s = random_consistent(&mut rng);
            let a = random_action(&mut rng);
            let arc = s.speed() * cfg.dt + 0.5 * a.accel * cfg.dt * cfg.dt;
            if arc.abs() <= 1e-3 {
                continue;
            }
            n += 1;
            let r = inv_kin(&s, &step(&s, &a, &cfg).unwrap(), &cfg).unwrap();
            worst = worst.max((r.accel - a.accel).abs()).max((r.curvature - a.curvature).abs());
        }
        assert!(worst < 1e-9, "worst action recovery error {worst}");
    }

    #[test]
    fn inv_kin_zero_arc_falls_back_to_zero_curvature() {
        let cfg = SimConfig::unclipped();
        let s = VehicleState::from_pose(0.0, 0.0, 0.3, 0.0);
        let t = VehicleState::from_pose(0.0, 0.0, 1.0, 0.0);
        let a = inv_kin(&s, &t, &cfg).unwrap();
        assert_eq!(a.curvature, 0.0);
        let (gs, gt) = inv_kin_vjp(&s, &t, &cfg, &[0.0, 1.0]);
        assert!(gs.iter().chain(gt.iter()).all(|g| *g == 0.0));
    }

    #[test]
    fn translation_gradient_is_identity() {
        let s = VehicleState::from_pose(3.0, -2.0, 0.4, 5.0);
        let (gs, _) = step_vjp(&s, &Action::default(), &SimConfig::default(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(gs[0], 1.0);
        assert_eq!(gs[1], 0.0);
    }

    #[test]
    fn saturated_accel_has_zero_gradient() {
        let cfg = SimConfig::default();
        let s = VehicleState::from_pose(0.0, 0.0, 0.0, 5.0);
        let a = Action::new(cfg.accel_max * 2.0, 0.0);
        let (_, ga) = step_vjp(&s, &a, &cfg, &[1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(ga[0], 0.0);
        assert!(ga[1] != 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-0.5 - 2.0 * PI), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn step_is_deterministic() {
        let s = VehicleState::from_pose(1.0, 2.0, 0.3, 7.0);
        let a = Action::new(1.3, -0.04);
        let cfg = SimConfig::default();
        let n1 = step(&s, &a, &cfg).unwrap();
        let n2 = step(&s, &a, &cfg).unwrap();
        assert_eq!(n1.to_array().map(f64::to_bits), n2.to_array().map(f64::to_bits));
    }
}
