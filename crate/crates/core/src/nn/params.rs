use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::features::FEATURE_LEN;
use crate::dynamics::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub feature_len: usize,
    pub encoder_hidden: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub mixture: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            feature_len: FEATURE_LEN,
            encoder_hidden: 64,
            hidden: 64,
            head_hidden: 32,
            mixture: 6,
        }
    }
}

impl NetConfig {
    /// Small network for gradient checks and quick tests.
    pub fn tiny() -> Self {
        Self {
            feature_len: FEATURE_LEN,
            encoder_hidden: 6,
            hidden: 5,
            head_hidden: 4,
            mixture: 3,
        }
    }

    /// Raw policy-head width: means, log-stddevs and logits.
    pub fn policy_out(&self) -> usize {
        self.mixture * (2 * ACTION_DIM + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Core,
    Policy,
    Odometry,
    Planner,
    Inverse,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Encoder,
        ParamGroup::Core,
        ParamGroup::Policy,
        ParamGroup::Odometry,
        ParamGroup::Planner,
        ParamGroup::Inverse,
    ];

    pub const HEADS: [ParamGroup; 3] = [ParamGroup::Odometry, ParamGroup::Planner, ParamGroup::Inverse];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub l1: LinearIds,
    pub l2: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_in: ParamId,
    pub w_hid: ParamId,
    pub b_in: ParamId,
    pub b_hid: ParamId,
}

/// Handles into [`ModelParams`] for each layer.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub encoder: MlpIds,
    pub gru: GruIds,
    pub policy: MlpIds,
    pub odometry: MlpIds,
    pub planner: MlpIds,
    pub inverse: MlpIds,
}

/// All learnable weights: encoder, recurrent core and four independent heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: NetConfig,
    tensors: Vec<Tensor>,
}

struct Builder {
    tensors: Vec<Tensor>,
}

impl Builder {
    fn add(&mut self, name: &str, shape: Vec<usize>, group: ParamGroup) -> ParamId {
        let n = shape.iter().product();
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape,
            group,
            data: vec![0.0; n],
        });
        ParamId(self.tensors.len() - 1)
    }

    fn linear(&mut self, prefix: &str, out: usize, inp: usize, group: ParamGroup) -> LinearIds {
        LinearIds {
            w: self.add(&format!("{prefix}.w"), vec![out, inp], group),
            b: self.add(&format!("{prefix}.b"), vec![out], group),
        }
    }

    fn mlp(&mut self, prefix: &str, inp: usize, hid: usize, out: usize, group: ParamGroup) -> MlpIds {
        MlpIds {
            l1: self.linear(&format!("{prefix}.l1"), hid, inp, group),
            l2: self.linear(&format!("{prefix}.l2"), out, hid, group),
        }
    }
}

fn build(config: &NetConfig) -> (Vec<Tensor>, Layout) {
    let mut b = Builder { tensors: Vec::new() };
    let h = config.hidden;
    let encoder = b.mlp(
        "encoder",
        config.feature_len,
        config.encoder_hidden,
        config.encoder_hidden,
        ParamGroup::Encoder,
    );
    let gru = GruIds {
        w_in: b.add("core.w_in", vec![3 * h, config.encoder_hidden], ParamGroup::Core),
        w_hid: b.add("core.w_hid", vec![3 * h, h], ParamGroup::Core),
        b_in: b.add("core.b_in", vec![3 * h], ParamGroup::Core),
        b_hid: b.add("core.b_hid", vec![3 * h], ParamGroup::Core),
    };
    let hh = config.head_hidden;
    let policy = b.mlp("policy", h, hh, config.policy_out(), ParamGroup::Policy);
    let odometry = b.mlp("odometry", h + ACTION_DIM, hh, STATE_DIM, ParamGroup::Odometry);
    let planner = b.mlp("planner", h, hh, STATE_DIM, ParamGroup::Planner);
    let inverse = b.mlp("inverse", h + ACTION_DIM, hh, STATE_DIM, ParamGroup::Inverse);
    (
        b.tensors,
        Layout {
            encoder,
            gru,
            policy,
            odometry,
            planner,
            inverse,
        },
    )
}

impl ModelParams {
    /// All-zero parameters with the canonical tensor set for `config`.
    pub fn zeros(config: NetConfig) -> Self {
        let (tensors, _) = build(&config);
        Self { config, tensors }
    }

    /// Uniform Glorot initialisation for hidden layers; the final layer of
    /// every head starts at zero so initial predictions are "no change" and
    /// initial policy means are the zero action.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let layout = p.layout();
        let mut rng = rng_for(&[seed, 0x1417]);
        let glorot = |p: &mut ModelParams, id: ParamId, rng: &mut rand_chacha::ChaCha8Rng| {
            let t = &mut p.tensors[id.0];
            let (fan_out, fan_in) = (t.shape[0], t.shape[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("valid bounds");
            t.data.iter_mut().for_each(|v| *v = dist.sample(rng));
        };
        glorot(&mut p, layout.encoder.l1.w, &mut rng);
        glorot(&mut p, layout.encoder.l2.w, &mut rng);
        glorot(&mut p, layout.gru.w_in, &mut rng);
        glorot(&mut p, layout.gru.w_hid, &mut rng);
        for head in [layout.policy, layout.odometry, layout.planner, layout.inverse] {
            glorot(&mut p, head.l1.w, &mut rng);
        }
        p
    }

    /// Every entry drawn uniformly from `[-scale, scale]`; used by gradient checks.
    pub fn random(config: NetConfig, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = rng_for(&[seed, 0x7a4d]);
        for t in &mut p.tensors {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
        p
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        build(&self.config).1
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.tensors[id.0].group
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view across tensors in canonical order.
    pub fn scalar(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i]
    }

    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i] = value;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if flat < tensor.data.len() {
                return (t, flat);
            }
            flat -= tensor.data.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Replace tensor contents by name, checking shapes.
    pub fn load_tensors(&mut self, incoming: HashMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        use crate::error::CheckpointError;
        let mut incoming = incoming;
        for t in &mut self.tensors {
            let (shape, data) = incoming
                .remove(&t.name)
                .ok_or_else(|| CheckpointError::MissingTensor(t.name.clone()))?;
            if shape != t.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: t.name.clone(),
                    found: shape,
                    expected: t.shape.clone(),
                }
                .into());
            }
            if data.len() != t.data.len() {
                return Err(Error::Contract(format!("payload length mismatch for {}", t.name)));
            }
            t.data = data;
        }
        if let Some(name) = incoming.keys().min() {
            return Err(CheckpointError::UnexpectedTensor(name.clone()).into());
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers aligned with a [`ModelParams`] tensor list.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    buffers: Vec<Vec<f64>>,
}

impl GradientAccumulator {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            names: params.tensors.iter().map(|t| t.name.clone()).collect(),
            groups: params.tensors.iter().map(|t| t.group).collect(),
            buffers: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.buffers[i].as_slice())
    }

    pub fn buffer(&self, id: ParamId) -> &[f64] {
        &self.buffers[id.0]
    }

    pub(crate) fn buffer_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.buffers[id.0]
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, ParamGroup, &[f64])> {
        self.names
            .iter()
            .zip(&self.groups)
            .zip(&self.buffers)
            .map(|((n, g), b)| (n.as_str(), *g, b.as_slice()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.buffers.iter().flatten().copied().collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientAccumulator, scale: f64) {
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.buffers.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.buffers.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean norm over the tensors of `groups`.
    pub fn group_norm(&self, groups: &[ParamGroup]) -> f64 {
        self.groups
            .iter()
            .zip(&self.buffers)
            .filter(|(g, _)| groups.contains(g))
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_groups(&mut self, groups: &[ParamGroup], s: f64) {
        for (g, b) in self.groups.iter().zip(&mut self.buffers) {
            if groups.contains(g) {
                b.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn zero_group(&mut self, group: ParamGroup) {
        for (g, b) in self.groups.iter().zip(&mut self.buffers) {
            if *g == group {
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn group_is_zero(&self, group: ParamGroup) -> bool {
        self.groups
            .iter()
            .zip(&self.buffers)
            .filter(|(g, _)| **g == group)
            .all(|(_, b)| b.iter().all(|v| *v == 0.0))
    }
}
