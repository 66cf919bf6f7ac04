//! Forward passes of the agent network on a [`Tape`].
//!
//! Encoder MLP and gated recurrent core feed four heads: a Gaussian-mixture
//! policy and three state predictors. The predictors emit ego-frame state
//! deltas; [`Tape::ego_to_world`] maps them into the world frame.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{Layout, MlpIds, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::dynamics::{Action, ACTION_DIM, STATE_DIM};

/// Policy means and stddevs are emitted in these units per action channel.
pub const ACTION_SCALE: [f64; ACTION_DIM] = [2.0, 0.05];
pub const LOG_STD_OFFSET: f64 = -1.0;
/// Per-channel output scale of the state-delta heads (ego frame).
pub const DELTA_SCALE: [f64; 5] = [1.0, 0.1, 0.3, 0.3, 0.05];
/// Output scale of the inverse-state head, whose targets are multi-step gaps
/// to the log rather than one-step deltas.
pub const INVERSE_SCALE: [f64; 5] = [2.0, 1.0, 1.0, 1.0, 0.1];

fn mlp(tape: &mut Tape<'_>, ids: MlpIds, x: Var) -> Var {
    let h = tape.linear(x, ids.l1);
    let h = tape.tanh(h);
    tape.linear(h, ids.l2)
}

fn action_input(tape: &mut Tape<'_>, hidden: Var, action: Var) -> Var {
    let a = tape.affine(action, ACTION_SCALE.iter().map(|s| 1.0 / s).collect(), &[0.0; ACTION_DIM]);
    tape.concat(hidden, a)
}

fn delta_out(tape: &mut Tape<'_>, raw: Var, scale: [f64; STATE_DIM]) -> Var {
    tape.affine(raw, scale.to_vec(), &[0.0; STATE_DIM])
}

/// Encoder MLP followed by the gated recurrent update.
pub fn core_step(tape: &mut Tape<'_>, layout: &Layout, features: Var, hidden: Var) -> Var {
    let e = tape.linear(features, layout.encoder.l1);
    let e = tape.tanh(e);
    let e = tape.linear(e, layout.encoder.l2);
    let e = tape.tanh(e);
    tape.gru(e, hidden, layout.gru)
}

/// Raw mixture parameters: means, log-stddevs, logits.
pub fn policy_forward(tape: &mut Tape<'_>, layout: &Layout, hidden: Var) -> Var {
    mlp(tape, layout.policy, hidden)
}

/// Ego-frame state change the action is predicted to cause.
pub fn odometry_forward(tape: &mut Tape<'_>, layout: &Layout, hidden: Var, action: Var) -> Var {
    let x = action_input(tape, hidden, action);
    let raw = mlp(tape, layout.odometry, x);
    delta_out(tape, raw, DELTA_SCALE)
}

/// Ego-frame offset to the next state to visit.
pub fn planner_forward(tape: &mut Tape<'_>, layout: &Layout, hidden: Var) -> Var {
    let raw = mlp(tape, layout.planner, hidden);
    delta_out(tape, raw, DELTA_SCALE)
}

/// Ego-frame displacement to the state in which `action` would be optimal.
pub fn inverse_forward(tape: &mut Tape<'_>, layout: &Layout, hidden: Var, action: Var) -> Var {
    let x = action_input(tape, hidden, action);
    let raw = mlp(tape, layout.inverse, x);
    delta_out(tape, raw, INVERSE_SCALE)
}

/// Decoded mixture in action units.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutput {
    pub means: Vec<[f64; ACTION_DIM]>,
    pub stddevs: Vec<[f64; ACTION_DIM]>,
    pub logits: Vec<f64>,
}

impl MixtureOutput {
    pub fn from_raw(raw: &[f64]) -> Self {
        let m = raw.len() / (2 * ACTION_DIM + 1);
        let means = (0..m)
            .map(|c| std::array::from_fn(|j| ACTION_SCALE[j] * raw[ACTION_DIM * c + j]))
            .collect();
        let stddevs = (0..m)
            .map(|c| std::array::from_fn(|j| ACTION_SCALE[j] * (raw[ACTION_DIM * (m + c) + j] + LOG_STD_OFFSET).exp()))
            .collect();
        Self {
            means,
            stddevs,
            logits: raw[2 * ACTION_DIM * m..].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean_action(&self, c: usize) -> Action {
        Action::from_slice(&self.means[c])
    }

    pub fn weights(&self) -> Vec<f64> {
        let mx = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Standard-normal noise for a reparameterised draw.
    pub fn draw_eps<R: Rng + ?Sized>(rng: &mut R) -> [f64; ACTION_DIM] {
        std::array::from_fn(|_| StandardNormal.sample(rng))
    }

    /// Component drawn by its mixture weight.
    pub fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let w = self.weights();
        for (k, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        w.len() - 1
    }

    pub fn action_from(&self, c: usize, eps: [f64; ACTION_DIM]) -> Action {
        Action::new(
            self.means[c][0] + self.stddevs[c][0] * eps[0],
            self.means[c][1] + self.stddevs[c][1] * eps[1],
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let c = self.draw_component(rng);
        let eps = Self::draw_eps(rng);
        self.action_from(c, eps)
    }
}

/// Tape-free inference helpers over a parameter set.
pub struct Network<'p> {
    params: &'p ModelParams,
    layout: Layout,
}

impl<'p> Network<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            layout: params.layout(),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.params.config().hidden]
    }

    pub fn core_step(&self, features: &[f64], hidden: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new(self.params);
        let f = tape.constant(features.to_vec());
        let h = tape.constant(hidden.to_vec());
        let out = core_step(&mut tape, &self.layout, f, h);
        tape.value(out).to_vec()
    }

    pub fn policy(&self, hidden: &[f64]) -> MixtureOutput {
        let mut tape = Tape::new(self.params);
        let h = tape.constant(hidden.to_vec());
        let out = policy_forward(&mut tape, &self.layout, h);
        MixtureOutput::from_raw(tape.value(out))
    }

    fn action_head(&self, hidden: &[f64], a: &Action, f: fn(&mut Tape<'_>, &Layout, Var, Var) -> Var) -> [f64; STATE_DIM] {
        let mut tape = Tape::new(self.params);
        let h = tape.constant(hidden.to_vec());
        let av = tape.constant(a.to_array().to_vec());
        let out = f(&mut tape, &self.layout, h, av);
        tape.value(out).try_into().expect("5-vector")
    }

    pub fn odometry(&self, hidden: &[f64], a: &Action) -> [f64; STATE_DIM] {
        self.action_head(hidden, a, odometry_forward)
    }

    pub fn inverse(&self, hidden: &[f64], a: &Action) -> [f64; STATE_DIM] {
        self.action_head(hidden, a, inverse_forward)
    }

    pub fn planner(&self, hidden: &[f64]) -> [f64; STATE_DIM] {
        let mut tape = Tape::new(self.params);
        let h = tape.constant(hidden.to_vec());
        let out = planner_forward(&mut tape, &self.layout, h);
        tape.value(out).try_into().expect("5-vector")
    }
}

/// Rotate an ego-frame delta by `yaw` into the world frame.
pub fn ego_delta_to_world(yaw: f64, d: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let (sy, cy) = yaw.sin_cos();
    [
        cy * d[0] - sy * d[1],
        sy * d[0] + cy * d[1],
        cy * d[2] - sy * d[3],
        sy * d[2] + cy * d[3],
        d[4],
    ]
}
