//! Two-phase trainer.
//!
//! Phase one trains encoder, recurrent core and policy with the policy
//! episode loss. Phase two freezes them, collects transitions from policy
//! rollouts and trains the three state-predictor heads jointly.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_unchecked, Action, SimConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, step_rng, Driver, EvalConfig, Observer};
use crate::losses::{apg_episode, planner_episode, transition_losses, EpisodeConfig, OdometryObjective, Transition};
use crate::metrics::summarize;
use crate::nn::features::RouteConditioning;
use crate::nn::params::{GradientAccumulator, ModelParams, NetConfig, ParamGroup};
use crate::parallel::Workers;
use crate::scenario::Scenario;
use crate::seeding::rng_for;

/// Relative weight of each objective; zero disables it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub policy: f64,
    pub odometry: f64,
    pub planner: f64,
    pub inverse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            policy: 1.0,
            odometry: 1.0,
            planner: 1.0,
            inverse: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Cosine decay target as a fraction of `learning_rate`; 1 keeps it constant.
    pub final_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub policy_epochs: usize,
    pub head_epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub route: RouteConditioning,
    pub nll_weight: f64,
    pub odometry_objective: OdometryObjective,
    /// Scenarios held out from training for the per-epoch ADE column.
    pub holdout: usize,
    /// Policy rollouts collected per scenario for the head phase.
    pub collect_rollouts: usize,
    /// Per-rollout constant action offsets, drawn uniformly in
    /// `[-bias, bias]`, widening the states the heads see.
    pub collect_accel_bias: f64,
    pub collect_curvature_bias: f64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            final_lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            batch_size: 16,
            policy_epochs: 100,
            head_epochs: 50,
            weights: LossWeights::default(),
            seed: 0,
            route: RouteConditioning::Heading,
            nll_weight: crate::losses::NLL_WEIGHT,
            odometry_objective: OdometryObjective::Forward,
            holdout: 0,
            collect_rollouts: 4,
            collect_accel_bias: 1.5,
            collect_curvature_bias: 0.01,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config("learning rate, clip and epsilon must be positive".into()));
        }
        if !(self.final_lr_scale > 0.0 && self.final_lr_scale <= 1.0) {
            return Err(Error::Config("final_lr_scale must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if [w.policy, w.odometry, w.planner, w.inverse].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam with per-group enable mask.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientAccumulator, groups: &[ParamGroup]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for ((tensor, (_, group, g)), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.buffers())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !groups.contains(&group) {
                continue;
            }
            for i in 0..g.len() {
                m[i] = self.b1 * m[i] + (1.0 - self.b1) * g[i];
                v[i] = self.b2 * v[i] + (1.0 - self.b2) * g[i] * g[i];
                tensor.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Cosine-decayed learning rate for `epoch` of `epochs`.
pub fn scheduled_lr(cfg: &TrainConfig, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return cfg.learning_rate;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    let f = cfg.final_lr_scale;
    cfg.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Scale `grads` so the norm over `groups` is at most `max`.
fn clip_groups(grads: &mut GradientAccumulator, groups: &[ParamGroup], max: f64) {
    let norm = grads.group_norm(groups);
    if norm > max {
        grads.scale_groups(groups, max / norm);
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogRow {
    pub epoch: usize,
    pub policy_loss: Option<f64>,
    pub odo_loss: Option<f64>,
    pub plan_loss: Option<f64>,
    pub inv_loss: Option<f64>,
    pub eval_ade: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,policy_loss,odo_loss,plan_loss,inv_loss,eval_ade";

impl LogRow {
    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            f(self.policy_loss),
            f(self.odo_loss),
            f(self.plan_loss),
            f(self.inv_loss),
            f(self.eval_ade)
        )
    }
}

pub fn write_log<W: Write>(rows: &[LogRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

/// Per-update callback hook, mostly for progress output.
pub trait Progress {
    fn epoch(&mut self, _row: &LogRow) {}
}

impl Progress for () {}

fn batches(n: usize, size: usize, seed: u64, epoch: usize, phase: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(&[seed, phase, epoch as u64]));
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// Sum of per-item gradients in item order, divided by the item count.
fn mean_grads(params: &ModelParams, parts: Vec<GradientAccumulator>) -> GradientAccumulator {
    let mut acc = GradientAccumulator::zeros_like(params);
    let n = parts.len().max(1) as f64;
    for g in &parts {
        acc.add_scaled(g, 1.0 / n);
    }
    acc
}

/// Phase one on `scenarios`; returns per-epoch mean state loss.
pub fn train_policy(
    params: &mut ModelParams,
    scenarios: &[Scenario],
    cfg: &TrainConfig,
    workers: &Workers,
    mut on_epoch: impl FnMut(usize, f64, &ModelParams) -> Option<f64>,
) -> Result<Vec<LogRow>> {
    let groups = [ParamGroup::Encoder, ParamGroup::Core, ParamGroup::Policy];
    let mut adam = Adam::new(params, cfg);
    let ep = EpisodeConfig {
        sim: SimConfig::default(),
        route: cfg.route,
        nll_weight: cfg.nll_weight,
        horizon: None,
    };
    let mut log = Vec::new();
    for epoch in 0..cfg.policy_epochs {
        adam.set_lr(scheduled_lr(cfg, epoch, cfg.policy_epochs));
        let mut total = 0.0;
        for batch in batches(scenarios.len(), cfg.batch_size, cfg.seed, epoch, 1) {
            let snapshot = &*params;
            let results = workers.map(&batch, |_, &i| {
                let mut rng = rng_for(&[cfg.seed, 1, epoch as u64, i as u64]);
                apg_episode(snapshot, &scenarios[i], i, &ep, &mut rng)
            });
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            total += results.iter().map(|r| r.state_loss).sum::<f64>();
            let mut g = mean_grads(params, results.into_iter().map(|r| r.grads).collect());
            g.scale(cfg.weights.policy);
            if !g.norm().is_finite() {
                return Err(Error::NonFiniteLoss {
                    scenario: batch[0],
                    step: 0,
                });
            }
            clip_groups(&mut g, &groups, cfg.grad_clip);
            adam.step(params, &g, &groups);
        }
        let mean = total / scenarios.len().max(1) as f64;
        let eval_ade = on_epoch(epoch, mean, params);
        log.push(LogRow {
            epoch,
            policy_loss: Some(mean),
            eval_ade,
            ..LogRow::default()
        });
    }
    Ok(log)
}

/// Transitions from frozen-policy rollouts on one scenario.
pub fn collect_transitions(params: &ModelParams, scn: &Scenario, scenario_id: usize, cfg: &TrainConfig) -> Vec<Transition> {
    let sim = SimConfig::default();
    let mut out = Vec::with_capacity(cfg.collect_rollouts * scn.len());
    for r in 0..cfg.collect_rollouts {
        let mut brng = rng_for(&[cfg.seed, 2, scenario_id as u64, r as u64]);
        let bias = if r == 0 {
            (0.0, 0.0)
        } else {
            (
                cfg.collect_accel_bias * brng.random_range(-1.0..=1.0),
                cfg.collect_curvature_bias * brng.random_range(-1.0..=1.0),
            )
        };
        let mut obs = Observer::new(params, cfg.route);
        let mut s = scn.expert.states[0];
        for t in 0..scn.len() - 1 {
            obs.observe(scn, t, &s);
            let mut rng = step_rng(cfg.seed ^ 0x5eed, scenario_id, r, t);
            let a = obs.net.policy(&obs.hidden).sample(&mut rng);
            let (a, _) = sim.clip(Action::new(a.accel + bias.0, a.curvature + bias.1));
            let next = step_unchecked(&s, &a, &sim);
            out.push(Transition {
                state: s,
                action: a,
                next,
                expert_next: scn.expert.states[t + 1],
                hidden: obs.hidden.clone(),
            });
            s = next;
        }
    }
    out
}

/// Mean per-scenario head losses of one phase-two epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadEpoch {
    pub odometry: f64,
    pub planner: f64,
    pub inverse: f64,
}

/// Phase two: heads trained on frozen-policy data.
pub fn train_heads(
    params: &mut ModelParams,
    scenarios: &[Scenario],
    cfg: &TrainConfig,
    workers: &Workers,
    mut on_epoch: impl FnMut(usize, HeadEpoch, &ModelParams),
) -> Result<Vec<HeadEpoch>> {
    let w = cfg.weights;
    let mut groups = Vec::new();
    if w.odometry > 0.0 {
        groups.push(ParamGroup::Odometry);
    }
    if w.planner > 0.0 {
        groups.push(ParamGroup::Planner);
    }
    if w.inverse > 0.0 {
        groups.push(ParamGroup::Inverse);
    }
    let mut out = Vec::new();
    if groups.is_empty() {
        return Ok(out);
    }
    let frozen = params.clone();
    let data: Vec<Vec<Transition>> = if w.odometry > 0.0 || w.inverse > 0.0 {
        workers.map(scenarios, |i, scn| collect_transitions(&frozen, scn, i, cfg))
    } else {
        vec![Vec::new(); scenarios.len()]
    };
    let plan_cfg = EpisodeConfig {
        sim: SimConfig::unclipped(),
        route: cfg.route,
        nll_weight: 0.0,
        horizon: None,
    };
    let mut adam = Adam::new(params, cfg);
    for epoch in 0..cfg.head_epochs {
        adam.set_lr(scheduled_lr(cfg, epoch, cfg.head_epochs));
        let mut sum = HeadEpoch::default();
        for batch in batches(scenarios.len(), cfg.batch_size, cfg.seed, epoch, 3) {
            let snapshot = &*params;
            let results = workers.map(&batch, |_, &i| -> Result<_> {
                let (hl, mut g) = transition_losses(
                    snapshot,
                    &data[i],
                    cfg.odometry_objective,
                    w.odometry,
                    w.inverse,
                    SimConfig::default(),
                )
                .map_err(|_| Error::NonFiniteLoss { scenario: i, step: 0 })?;
                let mut plan = 0.0;
                if w.planner > 0.0 {
                    let r = planner_episode(snapshot, &scenarios[i], i, &plan_cfg)?;
                    plan = r.loss;
                    g.add_scaled(&r.grads, w.planner);
                }
                Ok((hl, plan, g))
            });
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            let mut parts = Vec::with_capacity(results.len());
            for (hl, plan, g) in results {
                sum.odometry += hl.odometry;
                sum.inverse += hl.inverse;
                sum.planner += plan;
                parts.push(g);
            }
            let mut g = mean_grads(params, parts);
            if !g.norm().is_finite() {
                return Err(Error::NonFiniteLoss {
                    scenario: batch[0],
                    step: 0,
                });
            }
            // Heads are independent problems; clip each on its own.
            for grp in &groups {
                clip_groups(&mut g, &[*grp], cfg.grad_clip);
            }
            adam.step(params, &g, &groups);
        }
        let n = scenarios.len().max(1) as f64;
        let e = HeadEpoch {
            odometry: sum.odometry / n,
            planner: sum.planner / n,
            inverse: sum.inverse / n,
        };
        on_epoch(epoch, e, params);
        out.push(e);
    }
    Ok(out)
}

/// Full two-phase training with per-epoch log rows.
///
/// The last `cfg.holdout` scenarios are held out and used only for the
/// `eval_ade` column. A non-finite loss stops training and returns the last
/// parameters that produced finite losses.
pub fn train(dataset: &[Scenario], cfg: &TrainConfig, workers: &Workers, progress: &mut dyn Progress) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training needs a non-empty dataset".into()));
    }
    if cfg.holdout >= dataset.len() {
        return Err(Error::Config(format!(
            "holdout {} leaves no training scenarios out of {}",
            cfg.holdout,
            dataset.len()
        )));
    }
    let (train_set, held) = dataset.split_at(dataset.len() - cfg.holdout);
    let eval_cfg = EvalConfig {
        route: cfg.route,
        seed: cfg.seed,
        ..EvalConfig::default()
    };
    let eval_ade = |p: &ModelParams| -> Option<f64> {
        if held.is_empty() {
            return None;
        }
        evaluate(Driver::Policy(p), held, &eval_cfg, workers)
            .ok()
            .map(|r| summarize(&r.iter().map(|x| x.eval).collect::<Vec<_>>()).ade)
    };

    let mut params = ModelParams::init(cfg.net, cfg.seed);
    let mut log = Vec::new();
    let mut diverged = None;

    if cfg.weights.policy > 0.0 {
        let mut last_good = params.clone();
        let mut work = params.clone();
        let res = train_policy(&mut work, train_set, cfg, workers, |epoch, loss, p| {
            let ade = eval_ade(p);
            progress.epoch(&LogRow {
                epoch,
                policy_loss: Some(loss),
                eval_ade: ade,
                ..LogRow::default()
            });
            ade
        });
        match res {
            Ok(rows) => {
                log.extend(rows);
                last_good = work;
            }
            Err(e @ Error::NonFiniteLoss { .. }) => diverged = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        params = last_good;
    }

    if diverged.is_none() {
        let offset = log.len();
        let mut work = params.clone();
        let policy_ade = eval_ade(&params);
        let mut rows = Vec::new();
        let res = train_heads(&mut work, train_set, cfg, workers, |epoch, e, _| {
            let row = LogRow {
                epoch: offset + epoch,
                policy_loss: None,
                odo_loss: (cfg.weights.odometry > 0.0).then_some(e.odometry),
                plan_loss: (cfg.weights.planner > 0.0).then_some(e.planner),
                inv_loss: (cfg.weights.inverse > 0.0).then_some(e.inverse),
                eval_ade: policy_ade,
            };
            progress.epoch(&row);
            rows.push(row);
        });
        match res {
            Ok(_) => params = work,
            Err(e @ Error::NonFiniteLoss { .. }) => diverged = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        log.extend(rows);
    }

    Ok(TrainOutcome { params, log, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioKind};

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            final_lr_scale: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(scheduled_lr(&cfg, 0, 11), 1e-3);
        assert!((scheduled_lr(&cfg, 10, 11) - 1e-4).abs() < 1e-18);
        assert!((scheduled_lr(&cfg, 5, 11) - 5.5e-4).abs() < 1e-15);
        let flat = TrainConfig::default();
        assert_eq!(scheduled_lr(&flat, 7, 11), flat.learning_rate);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            net: NetConfig::tiny(),
            policy_epochs: 2,
            head_epochs: 2,
            batch_size: 2,
            collect_rollouts: 2,
            ..TrainConfig::default()
        }
    }

    fn data() -> Vec<Scenario> {
        [ScenarioKind::Straight, ScenarioKind::Arc, ScenarioKind::StopGo]
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let mut s = generate_scenario(*k, i as u64);
                s.expert.states.truncate(12);
                s.expert.actions.truncate(11);
                s
            })
            .collect()
    }

    #[test]
    fn zero_weight_head_is_unchanged() {
        let mut cfg = tiny_cfg();
        cfg.weights.planner = 0.0;
        let out = train(&data(), &cfg, &Workers::sequential(), &mut ()).unwrap();
        let init = ModelParams::init(cfg.net, cfg.seed);
        for (a, b) in out.params.tensors().iter().zip(init.tensors()) {
            if a.group == ParamGroup::Planner {
                assert_eq!(a.data, b.data, "{}", a.name);
            }
        }
        assert!(out.log.iter().all(|r| r.plan_loss.is_none()));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = TrainConfig {
            holdout: 1,
            ..tiny_cfg()
        };
        let a = train(&data(), &cfg, &Workers::sequential(), &mut ()).unwrap();
        let b = train(&data(), &cfg, &Workers::new(2).unwrap(), &mut ()).unwrap();
        let csv = |o: &TrainOutcome| {
            let mut v = Vec::new();
            write_log(&o.log, &mut v).unwrap();
            v
        };
        assert_eq!(csv(&a), csv(&b));
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 4);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_cfg()
        };
        assert!(matches!(
            train(&data(), &cfg, &Workers::sequential(), &mut ()),
            Err(Error::Config(_))
        ));
        assert!(train(&[], &tiny_cfg(), &Workers::sequential(), &mut ()).is_err());
    }
}
