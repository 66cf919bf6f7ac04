//! Append-only tape over a fixed vocabulary of primitives with hand-written
//! vector-Jacobian products.
//!
//! Forward calls push nodes holding their output value plus whatever the
//! reverse pass needs. [`Tape::backward`] walks the nodes once, newest first,
//! accumulating input adjoints additively and parameter gradients into a
//! [`GradientAccumulator`].

use std::collections::BTreeMap;

use crate::dynamics::{
    inv_kin_unchecked, inv_kin_vjp, inverse_step_unchecked, inverse_step_vjp, step_unchecked, step_vjp, Action, SimConfig,
    VehicleState, ACTION_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::nn::features::{encode_vjp, features_from_saved, EncodeSaved};
use crate::nn::params::{GradientAccumulator, GruIds, LinearIds, ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct GruSaved {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    /// Constant leaf; `marked` leaves report their gradient.
    Input {
        marked: bool,
    },
    Linear(LinearIds),
    Tanh,
    Gru(GruIds, Box<GruSaved>),
    Concat,
    Add,
    /// offset + scale * x, elementwise scale.
    Affine {
        scale: Vec<f64>,
    },
    Step(SimConfig),
    InverseStep(SimConfig),
    InvKin(SimConfig),
    EgoToWorld,
    Encode(Box<EncodeSaved>),
    MixtureSample {
        component: usize,
        eps: [f64; ACTION_DIM],
        scale: [f64; ACTION_DIM],
        log_std_offset: f64,
    },
    MixtureNll {
        component: usize,
        mixture: usize,
    },
    GaussianNll {
        component: usize,
        mixture: usize,
        target: [f64; ACTION_DIM],
        log_std_offset: f64,
    },
    /// ||x - target||^2 with per-channel weights.
    SqDist {
        target: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
    /// Weighted sum of scalars.
    WeightedSum(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Vec<f64>,
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: GradientAccumulator,
    /// Adjoints of marked inputs, keyed by their variable.
    pub inputs: BTreeMap<Var, Vec<f64>>,
}

impl Backward {
    pub fn input(&self, v: Var) -> &[f64] {
        &self.inputs[&v]
    }
}

pub struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
    frozen: [bool; ParamGroup::ALL.len()],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_add(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(cols).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// gx += W^T g
fn matvec_t_acc(w: &[f64], g: &[f64], gx: &mut [f64]) {
    let cols = gx.len();
    for (row, gi) in w.chunks_exact(cols).zip(g) {
        if *gi == 0.0 {
            continue;
        }
        for (acc, wv) in gx.iter_mut().zip(row) {
            *acc += wv * gi;
        }
    }
}

/// gw += g x^T, gb += g
fn outer_acc(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, gi) in gw.chunks_exact_mut(cols).zip(g) {
        if *gi == 0.0 {
            continue;
        }
        for (acc, xv) in row.iter_mut().zip(x) {
            *acc += gi * xv;
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            frozen: [false; ParamGroup::ALL.len()],
        }
    }

    /// Skip parameter-gradient accumulation for `group`. Gradients still
    /// flow through its layers to their inputs.
    pub fn freeze(&mut self, group: ParamGroup) {
        self.frozen[group as usize] = true;
    }

    fn frozen(&self, id: crate::nn::params::ParamId) -> bool {
        self.frozen[self.params.group(id) as usize]
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn state(&self, v: Var) -> VehicleState {
        VehicleState::from_slice(self.value(v))
    }

    pub fn action(&self, v: Var) -> Action {
        Action::from_slice(self.value(v))
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, parents, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input { marked: false }, vec![], value)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input { marked: true }, vec![], value)
    }

    /// Copy of `v`'s value as a fresh constant (gradient stops here).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        self.constant(value)
    }

    pub fn linear(&mut self, x: Var, ids: LinearIds) -> Var {
        let w = self.params.data(ids.w);
        let b = self.params.data(ids.b);
        let shape = self.params.shape(ids.w);
        assert_eq!(shape[1], self.value(x).len(), "linear input width");
        let mut out = vec![0.0; shape[0]];
        matvec_add(w, b, self.value(x), &mut out);
        self.push(Op::Linear(ids), vec![x.0], out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh, vec![x.0], out)
    }

    /// Gated recurrent update `h' = (1 - z) * n + z * h`.
    pub fn gru(&mut self, x: Var, h: Var, ids: GruIds) -> Var {
        let hd = self.value(h).len();
        let mut gi = vec![0.0; 3 * hd];
        let mut gh = vec![0.0; 3 * hd];
        matvec_add(self.params.data(ids.w_in), self.params.data(ids.b_in), self.value(x), &mut gi);
        matvec_add(
            self.params.data(ids.w_hid),
            self.params.data(ids.b_hid),
            self.value(h),
            &mut gh,
        );
        let hv = self.value(h);
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for k in 0..hd {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[hd + k] + gh[hd + k]);
            n[k] = (gi[2 * hd + k] + r[k] * gh[2 * hd + k]).tanh();
            out[k] = (1.0 - z[k]) * n[k] + z[k] * hv[k];
        }
        let hn = gh[2 * hd..].to_vec();
        self.push(Op::Gru(ids, Box::new(GruSaved { r, z, n, hn })), vec![x.0, h.0], out)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        self.push(Op::Concat, vec![a.0, b.0], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add, vec![a.0, b.0], out)
    }

    /// `offset + scale * x` elementwise.
    pub fn affine(&mut self, x: Var, scale: Vec<f64>, offset: &[f64]) -> Var {
        let out = self
            .value(x)
            .iter()
            .zip(&scale)
            .zip(offset)
            .map(|((v, s), o)| o + s * v)
            .collect();
        self.push(Op::Affine { scale }, vec![x.0], out)
    }

    pub fn step(&mut self, s: Var, a: Var, cfg: SimConfig) -> Var {
        let out = step_unchecked(&self.state(s), &self.action(a), &cfg);
        self.push(Op::Step(cfg), vec![s.0, a.0], out.to_array().to_vec())
    }

    pub fn inverse_step(&mut self, s_next: Var, a: Var, cfg: SimConfig) -> Var {
        let out = inverse_step_unchecked(&self.state(s_next), &self.action(a), &cfg);
        self.push(Op::InverseStep(cfg), vec![s_next.0, a.0], out.to_array().to_vec())
    }

    pub fn inv_kin(&mut self, s: Var, target: Var, cfg: SimConfig) -> Var {
        let out = inv_kin_unchecked(&self.state(s), &self.state(target), &cfg);
        self.push(Op::InvKin(cfg), vec![s.0, target.0], out.to_array().to_vec())
    }

    /// Rotate an ego-frame state delta into the world frame of `s`:
    /// position and velocity pairs are rotated by `s.yaw`, the yaw delta is kept.
    pub fn ego_to_world(&mut self, s: Var, delta: Var) -> Var {
        let yaw = self.value(s)[4];
        let d = self.value(delta);
        let (sy, cy) = yaw.sin_cos();
        let out = vec![
            cy * d[0] - sy * d[1],
            sy * d[0] + cy * d[1],
            cy * d[2] - sy * d[3],
            sy * d[2] + cy * d[3],
            d[4],
        ];
        self.push(Op::EgoToWorld, vec![s.0, delta.0], out)
    }

    pub fn encode(&mut self, s: Var, saved: EncodeSaved) -> Var {
        let out = features_from_saved(&saved, &self.state(s)).values;
        self.push(Op::Encode(Box::new(saved)), vec![s.0], out)
    }

    /// Reparameterised draw `scale * (mu_c + exp(log_std_c + offset) * eps)`
    /// from component `component` of a raw mixture output.
    pub fn mixture_sample(
        &mut self,
        raw: Var,
        component: usize,
        eps: [f64; ACTION_DIM],
        scale: [f64; ACTION_DIM],
        log_std_offset: f64,
    ) -> Var {
        let m = self.value(raw).len() / (2 * ACTION_DIM + 1);
        let r = self.value(raw);
        let out = (0..ACTION_DIM)
            .map(|j| {
                let mu = r[ACTION_DIM * component + j];
                let sd = (r[ACTION_DIM * m + ACTION_DIM * component + j] + log_std_offset).exp();
                scale[j] * (mu + sd * eps[j])
            })
            .collect();
        self.push(
            Op::MixtureSample {
                component,
                eps,
                scale,
                log_std_offset,
            },
            vec![raw.0],
            out,
        )
    }

    /// `-log softmax(logits)[component]`.
    pub fn mixture_nll(&mut self, raw: Var, component: usize) -> Var {
        let m = self.value(raw).len() / (2 * ACTION_DIM + 1);
        let logits = &self.value(raw)[2 * ACTION_DIM * m..];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        let out = vec![lse - logits[component]];
        self.push(Op::MixtureNll { component, mixture: m }, vec![raw.0], out)
    }

    /// Negative log-density of `target` (in units of the action scale) under
    /// the diagonal Gaussian of mixture component `component`.
    pub fn gaussian_nll(&mut self, raw: Var, component: usize, target: [f64; ACTION_DIM], log_std_offset: f64) -> Var {
        let m = self.value(raw).len() / (2 * ACTION_DIM + 1);
        let r = self.value(raw);
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let out = (0..ACTION_DIM)
            .map(|j| {
                let ls = r[ACTION_DIM * m + ACTION_DIM * component + j] + log_std_offset;
                let z = (target[j] - r[ACTION_DIM * component + j]) * (-ls).exp();
                ls + 0.5 * z * z + half_log_2pi
            })
            .sum();
        self.push(
            Op::GaussianNll {
                component,
                mixture: m,
                target,
                log_std_offset,
            },
            vec![raw.0],
            vec![out],
        )
    }

    pub fn sq_dist(&mut self, x: Var, target: &[f64]) -> Var {
        let out = self.value(x).iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
        self.push(
            Op::SqDist {
                target: target.to_vec(),
                weights: None,
            },
            vec![x.0],
            vec![out],
        )
    }

    pub fn weighted_sq_dist(&mut self, x: Var, target: &[f64], weights: &[f64]) -> Var {
        let out = self
            .value(x)
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((a, b), w)| w * (a - b).powi(2))
            .sum();
        self.push(
            Op::SqDist {
                target: target.to_vec(),
                weights: Some(weights.to_vec()),
            },
            vec![x.0],
            vec![out],
        )
    }

    pub fn weighted_sum(&mut self, terms: &[Var], weights: &[f64]) -> Var {
        assert_eq!(terms.len(), weights.len());
        let out = terms.iter().zip(weights).map(|(t, w)| w * self.scalar(*t)).sum();
        self.push(
            Op::WeightedSum(weights.to_vec()),
            terms.iter().map(|t| t.0).collect(),
            vec![out],
        )
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        self.weighted_sum(terms, &vec![1.0; terms.len()])
    }

    /// Reverse pass from `root` seeded with `seed` (same length as its value).
    pub fn backward(&self, root: Var, seed: &[f64]) -> Result<Backward> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(Error::Contract(format!(
                "seed has {} entries but node {} has {}",
                seed.len(),
                root.0,
                self.nodes[root.0].value.len()
            )));
        }
        let mut params = GradientAccumulator::zeros_like(self.params);
        let mut inputs = BTreeMap::new();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed.to_vec());

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let pv = |k: usize| self.nodes[node.parents[k]].value.as_slice();
            match &node.op {
                Op::Input { marked } => {
                    if *marked {
                        inputs.insert(Var(i), g);
                    }
                }
                Op::Linear(ids) => {
                    let x = pv(0);
                    let mut gx = vec![0.0; x.len()];
                    matvec_t_acc(self.params.data(ids.w), &g, &mut gx);
                    if !self.frozen(ids.w) {
                        outer_acc(params.buffer_mut(ids.w), &g, x);
                        params.buffer_mut(ids.b).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[node.parents[0]], &gx);
                }
                Op::Tanh => {
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_into(&mut grads[node.parents[0]], &gx);
                }
                Op::Gru(ids, saved) => {
                    let (x, h) = (pv(0), pv(1));
                    let hd = h.len();
                    let mut d_in = vec![0.0; 3 * hd];
                    let mut d_hid = vec![0.0; 3 * hd];
                    let mut gh = vec![0.0; hd];
                    for k in 0..hd {
                        let (r, z, n) = (saved.r[k], saved.z[k], saved.n[k]);
                        let g_n = g[k] * (1.0 - z);
                        let g_z = g[k] * (h[k] - n);
                        gh[k] = g[k] * z;
                        let a_n = g_n * (1.0 - n * n);
                        let a_r = a_n * saved.hn[k] * r * (1.0 - r);
                        let a_z = g_z * z * (1.0 - z);
                        d_in[k] = a_r;
                        d_in[hd + k] = a_z;
                        d_in[2 * hd + k] = a_n;
                        d_hid[k] = a_r;
                        d_hid[hd + k] = a_z;
                        d_hid[2 * hd + k] = a_n * r;
                    }
                    let mut gx = vec![0.0; x.len()];
                    matvec_t_acc(self.params.data(ids.w_in), &d_in, &mut gx);
                    matvec_t_acc(self.params.data(ids.w_hid), &d_hid, &mut gh);
                    if !self.frozen(ids.w_in) {
                        outer_acc(params.buffer_mut(ids.w_in), &d_in, x);
                        outer_acc(params.buffer_mut(ids.w_hid), &d_hid, h);
                        params.buffer_mut(ids.b_in).iter_mut().zip(&d_in).for_each(|(a, b)| *a += b);
                        params.buffer_mut(ids.b_hid).iter_mut().zip(&d_hid).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[node.parents[0]], &gx);
                    add_into(&mut grads[node.parents[1]], &gh);
                }
                Op::Concat => {
                    let na = pv(0).len();
                    add_into(&mut grads[node.parents[0]], &g[..na]);
                    add_into(&mut grads[node.parents[1]], &g[na..]);
                }
                Op::Add => {
                    add_into(&mut grads[node.parents[0]], &g);
                    add_into(&mut grads[node.parents[1]], &g);
                }
                Op::Affine { scale } => {
                    let gx: Vec<f64> = g.iter().zip(scale).map(|(g, s)| g * s).collect();
                    add_into(&mut grads[node.parents[0]], &gx);
                }
                Op::Step(cfg) => {
                    let s = VehicleState::from_slice(pv(0));
                    let a = Action::from_slice(pv(1));
                    let up: [f64; STATE_DIM] = g[..].try_into().expect("state adjoint");
                    let (gs, ga) = step_vjp(&s, &a, cfg, &up);
                    add_into(&mut grads[node.parents[0]], &gs);
                    add_into(&mut grads[node.parents[1]], &ga);
                }
                Op::InverseStep(cfg) => {
                    let s = VehicleState::from_slice(pv(0));
                    let a = Action::from_slice(pv(1));
                    let up: [f64; STATE_DIM] = g[..].try_into().expect("state adjoint");
                    let (gs, ga) = inverse_step_vjp(&s, &a, cfg, &up);
                    add_into(&mut grads[node.parents[0]], &gs);
                    add_into(&mut grads[node.parents[1]], &ga);
                }
                Op::InvKin(cfg) => {
                    let s = VehicleState::from_slice(pv(0));
                    let t = VehicleState::from_slice(pv(1));
                    let up: [f64; ACTION_DIM] = g[..].try_into().expect("action adjoint");
                    let (gs, gt) = inv_kin_vjp(&s, &t, cfg, &up);
                    add_into(&mut grads[node.parents[0]], &gs);
                    add_into(&mut grads[node.parents[1]], &gt);
                }
                Op::EgoToWorld => {
                    let yaw = pv(0)[4];
                    let d = pv(1);
                    let (sy, cy) = yaw.sin_cos();
                    let gd = [
                        cy * g[0] + sy * g[1],
                        -sy * g[0] + cy * g[1],
                        cy * g[2] + sy * g[3],
                        -sy * g[2] + cy * g[3],
                        g[4],
                    ];
                    // d/dyaw R(yaw) = R(yaw + pi/2)
                    let g_yaw = g[0] * (-sy * d[0] - cy * d[1])
                        + g[1] * (cy * d[0] - sy * d[1])
                        + g[2] * (-sy * d[2] - cy * d[3])
                        + g[3] * (cy * d[2] - sy * d[3]);
                    add_into(&mut grads[node.parents[0]], &[0.0, 0.0, 0.0, 0.0, g_yaw]);
                    add_into(&mut grads[node.parents[1]], &gd);
                }
                Op::Encode(saved) => {
                    let s = VehicleState::from_slice(pv(0));
                    let gs = encode_vjp(saved, &s, &g);
                    add_into(&mut grads[node.parents[0]], &gs);
                }
                Op::MixtureSample {
                    component,
                    eps,
                    scale,
                    log_std_offset,
                } => {
                    let r = pv(0);
                    let m = r.len() / (2 * ACTION_DIM + 1);
                    let mut gr = vec![0.0; r.len()];
                    for j in 0..ACTION_DIM {
                        let mu_i = ACTION_DIM * component + j;
                        let ls_i = ACTION_DIM * m + ACTION_DIM * component + j;
                        let sd = (r[ls_i] + log_std_offset).exp();
                        gr[mu_i] = g[j] * scale[j];
                        gr[ls_i] = g[j] * scale[j] * sd * eps[j];
                    }
                    add_into(&mut grads[node.parents[0]], &gr);
                }
                Op::MixtureNll { component, mixture } => {
                    let r = pv(0);
                    let logits = &r[2 * ACTION_DIM * mixture..];
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                    let mut gr = vec![0.0; r.len()];
                    for (k, l) in logits.iter().enumerate() {
                        let p = (l - mx).exp() / z;
                        let onehot = if k == *component { 1.0 } else { 0.0 };
                        gr[2 * ACTION_DIM * mixture + k] = g[0] * (p - onehot);
                    }
                    add_into(&mut grads[node.parents[0]], &gr);
                }
                Op::GaussianNll {
                    component,
                    mixture,
                    target,
                    log_std_offset,
                } => {
                    let r = pv(0);
                    let mut gr = vec![0.0; r.len()];
                    for (j, tj) in target.iter().enumerate() {
                        let mu_i = ACTION_DIM * component + j;
                        let ls_i = ACTION_DIM * mixture + mu_i;
                        let inv_sd = (-(r[ls_i] + log_std_offset)).exp();
                        let z = (tj - r[mu_i]) * inv_sd;
                        gr[mu_i] = -g[0] * z * inv_sd;
                        gr[ls_i] = g[0] * (1.0 - z * z);
                    }
                    add_into(&mut grads[node.parents[0]], &gr);
                }
                Op::SqDist { target, weights } => {
                    let x = pv(0);
                    let gx: Vec<f64> = match weights {
                        None => x.iter().zip(target).map(|(a, b)| 2.0 * g[0] * (a - b)).collect(),
                        Some(w) => x
                            .iter()
                            .zip(target)
                            .zip(w)
                            .map(|((a, b), w)| 2.0 * g[0] * w * (a - b))
                            .collect(),
                    };
                    add_into(&mut grads[node.parents[0]], &gx);
                }
                Op::WeightedSum(w) => {
                    for (p, wk) in node.parents.iter().zip(w) {
                        add_into(&mut grads[*p], &[g[0] * wk]);
                    }
                }
            }
        }
        Ok(Backward { params, inputs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::NetConfig;

    #[test]
    fn seed_shape_mismatch_is_an_error() {
        let p = ModelParams::zeros(NetConfig::tiny());
        let mut tape = Tape::new(&p);
        let x = tape.input(vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_value_accumulates() {
        let p = ModelParams::zeros(NetConfig::tiny());
        let mut tape = Tape::new(&p);
        let x = tape.input(vec![3.0]);
        let y = tape.add(x, x);
        let z = tape.weighted_sum(&[y, x], &[2.0, 1.0]);
        let b = tape.backward(z, &[1.0]).unwrap();
        assert_eq!(b.input(x), &[5.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let p = ModelParams::zeros(NetConfig::tiny());
        let mut tape = Tape::new(&p);
        let x = tape.input(vec![3.0]);
        let d = tape.detach(x);
        let z = tape.add(x, d);
        let b = tape.backward(z, &[1.0]).unwrap();
        assert_eq!(b.input(x), &[1.0]);
    }
}
