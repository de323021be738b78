//! Group Relative Policy Optimization for the planner.
//!
//! For each query a group of `k` plans is sampled under the frozen policy
//! `π_old`. Rewards are normalized within the group,
//! `Â_j = (R_j − μ) / (σ + η)` with the population std, and the policy ascends
//! the clipped surrogate
//!
//! ```text
//! J(θ) = mean_j min(r_j Â_j, clip(r_j, 1−ε, 1+ε) Â_j),   r_j = π_θ(P_j) / π_old(P_j)
//! ```
//!
//! averaged flat over every sample of every group in the batch. There is no
//! KL penalty.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{
    accumulate_log_prob_gradient, greedy_plan, plan_log_prob, sample_plan, PlannerError,
    PlannerParams, SampledPlan, WeightMatrix,
};
use crate::reward::RewardKind;
use crate::seeding::{domain, stream};
use crate::toolworld::{Task, ToolWorld};

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("no tasks to train on")]
    NoTasks,
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("group for task {0} has no advantages")]
    MissingAdvantages(usize),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    pub eta: f64,
}

/// `k` plans for one query with their `π_old` log-probabilities.
/// `rewards` and `advantages` are empty until filled.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanGroup {
    pub task: Task,
    pub samples: Vec<SampledPlan>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl PlanGroup {
    pub fn task_id(&self) -> usize {
        self.task.task_id
    }

    /// Scores every sample and fills rewards and advantages.
    pub fn assign_rewards(&mut self, reward: RewardKind, eta: f64) -> GroupStats {
        self.rewards = self
            .samples
            .iter()
            .map(|s| reward.score(&s.plan, &self.task.truth_plan))
            .collect();
        let (adv, stats) = normalize_advantages(&self.rewards, eta);
        self.advantages = adv;
        stats
    }

    /// Samples whose tool sequence and stop flag repeat an earlier sample.
    pub fn duplicate_count(&self) -> usize {
        let mut seen: Vec<(Vec<usize>, bool)> = Vec::new();
        let mut dups = 0;
        for s in &self.samples {
            let key = (s.plan.tool_ids(), s.stopped_naturally);
            if seen.contains(&key) {
                dups += 1;
            } else {
                seen.push(key);
            }
        }
        dups
    }
}

/// Draws `k` i.i.d. plans; duplicates are allowed.
pub fn sample_group<R: Rng + ?Sized>(
    params: &PlannerParams,
    world: &ToolWorld,
    task: &Task,
    k: usize,
    rng: &mut R,
) -> Result<PlanGroup, GrpoError> {
    if k < 2 {
        return Err(GrpoError::GroupTooSmall(k));
    }
    let max_steps = params.shape().max_steps;
    let samples = (0..k)
        .map(|_| sample_plan(params, world, task, max_steps, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlanGroup {
        task: task.clone(),
        samples,
        rewards: Vec::new(),
        advantages: Vec::new(),
    })
}

/// Group-relative advantages with the population standard deviation.
///
/// # Panics
/// If fewer than two rewards are given or `eta <= 0`.
pub fn normalize_advantages(rewards: &[f64], eta: f64) -> (Vec<f64>, GroupStats) {
    assert!(rewards.len() >= 2, "a group needs at least two rewards");
    assert!(eta > 0.0, "eta must be positive");
    let k = rewards.len() as f64;
    if rewards.iter().all(|&r| r == rewards[0]) {
        // A summed mean can miss r by an ulp and leave ~1e-9 advantages.
        let stats = GroupStats { mean: rewards[0], std: 0.0, eta };
        return (vec![0.0; rewards.len()], stats);
    }
    let mean = rewards.iter().sum::<f64>() / k;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
    let std = var.sqrt();
    let adv = rewards.iter().map(|r| (r - mean) / (std + eta)).collect();
    (adv, GroupStats { mean, std, eta })
}

/// Objective, gradient and clip statistics at one parameter point.
#[derive(Clone, Debug)]
pub struct SurrogateEval {
    pub objective: f64,
    pub gradient: WeightMatrix,
    /// Fraction of samples where the clipped term was strictly selected.
    pub clip_fraction: f64,
}

fn check_groups(groups: &[PlanGroup]) -> Result<usize, GrpoError> {
    let mut n = 0;
    for g in groups {
        if g.advantages.len() != g.samples.len() {
            return Err(GrpoError::MissingAdvantages(g.task_id()));
        }
        n += g.samples.len();
    }
    Ok(n)
}

fn surrogate(
    params: &PlannerParams,
    groups: &[PlanGroup],
    clip_eps: f64,
    with_gradient: bool,
) -> Result<SurrogateEval, GrpoError> {
    let n = check_groups(groups)?;
    let shape = params.shape();
    let mut gradient = WeightMatrix::zeros(shape.input_dim(), shape.num_actions());
    if n == 0 {
        return Ok(SurrogateEval {
            objective: 0.0,
            gradient,
            clip_fraction: 0.0,
        });
    }
    let mut total = 0.0;
    let mut clipped = 0usize;
    for g in groups {
        for (s, &adv) in g.samples.iter().zip(&g.advantages) {
            let lp = plan_log_prob(params, &g.task, &s.plan, s.stopped_naturally)?;
            let ratio = (lp - s.log_prob).exp();
            let unclipped = ratio * adv;
            let clipped_term = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
            if unclipped <= clipped_term {
                total += unclipped;
                if with_gradient && adv != 0.0 {
                    // d(r Â)/dθ = Â r ∇ log π
                    accumulate_log_prob_gradient(
                        params,
                        &g.task,
                        &s.plan,
                        s.stopped_naturally,
                        adv * ratio / n as f64,
                        &mut gradient,
                    )?;
                }
            } else {
                total += clipped_term;
                clipped += 1;
            }
        }
    }
    Ok(SurrogateEval {
        objective: total / n as f64,
        gradient,
        clip_fraction: clipped as f64 / n as f64,
    })
}

pub fn grpo_objective(params: &PlannerParams, groups: &[PlanGroup], clip_eps: f64) -> Result<f64, GrpoError> {
    Ok(surrogate(params, groups, clip_eps, false)?.objective)
}

pub fn grpo_gradient(
    params: &PlannerParams,
    groups: &[PlanGroup],
    clip_eps: f64,
) -> Result<WeightMatrix, GrpoError> {
    Ok(surrogate(params, groups, clip_eps, true)?.gradient)
}

pub fn grpo_evaluate(
    params: &PlannerParams,
    groups: &[PlanGroup],
    clip_eps: f64,
) -> Result<SurrogateEval, GrpoError> {
    surrogate(params, groups, clip_eps, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub eta: f64,
    pub batch_tasks: usize,
    pub inner_updates: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            epochs: 15,
            learning_rate: 2.0,
            clip_eps: 0.2,
            eta: 1e-8,
            batch_tasks: 128,
            inner_updates: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.k < 2 {
            return Err(GrpoError::GroupTooSmall(self.k));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        if self.batch_tasks == 0 || self.inner_updates == 0 {
            return bad("batch_tasks and inner_updates must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// Surrogate after the epoch's last update of each batch, averaged over batches.
    pub objective: f64,
    pub clip_fraction: f64,
    /// Greedy plan exact-match on the probe set; `None` without one.
    pub holdout_exact_match: Option<f64>,
    pub duplicate_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_reward,mean_abs_advantage,objective,clip_fraction,holdout_exact_match\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.mean_reward,
                r.mean_abs_advantage,
                r.objective,
                r.clip_fraction,
                r.holdout_exact_match.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Fraction of tasks whose greedy plan equals the truth plan exactly.
pub fn exact_match_rate(params: &PlannerParams, world: &ToolWorld, tasks: &[Task]) -> Result<f64, GrpoError> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for t in tasks {
        if greedy_plan(params, world, t)?.matches_tools(&t.truth_plan) {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

/// Runs GRPO from `initial`. `probe` is only evaluated, never trained on.
pub fn train(
    world: &ToolWorld,
    tasks: &[Task],
    probe: &[Task],
    initial: &PlannerParams,
    reward: RewardKind,
    config: &TrainConfig,
) -> Result<(PlannerParams, TrainingLog), GrpoError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(GrpoError::NoTasks);
    }
    let mut params = initial.clone();
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(&[domain::SHUFFLE, config.seed, epoch as u64]));
        let (mut reward_sum, mut adv_sum, mut samples, mut dups) = (0.0, 0.0, 0usize, 0usize);
        let (mut obj_sum, mut clip_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_tasks).enumerate() {
            let mut groups = Vec::with_capacity(chunk.len());
            for &ti in chunk {
                let task = &tasks[ti];
                let mut rng = stream(&[domain::GROUP, config.seed, epoch as u64, task.task_id as u64]);
                let mut g = sample_group(&params, world, task, config.k, &mut rng)?;
                g.assign_rewards(reward, config.eta);
                reward_sum += g.rewards.iter().sum::<f64>();
                adv_sum += g.advantages.iter().map(|a| a.abs()).sum::<f64>();
                samples += g.samples.len();
                dups += g.duplicate_count();
                groups.push(g);
            }
            let non_finite = |what| GrpoError::NonFinite { what, epoch, batch: b };
            for _ in 0..config.inner_updates {
                let eval = grpo_evaluate(&params, &groups, config.clip_eps)?;
                if !eval.objective.is_finite() {
                    return Err(non_finite("objective"));
                }
                if !eval.gradient.is_finite() {
                    return Err(non_finite("gradient"));
                }
                params = params.stepped(config.learning_rate, &eval.gradient);
            }
            let after = surrogate(&params, &groups, config.clip_eps, false)?;
            if !after.objective.is_finite() {
                return Err(non_finite("objective"));
            }
            obj_sum += after.objective;
            clip_sum += after.clip_fraction;
            batches += 1;
        }
        let holdout = if probe.is_empty() {
            None
        } else {
            Some(exact_match_rate(&params, world, probe)?)
        };
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            mean_reward: reward_sum / samples as f64,
            mean_abs_advantage: adv_sum / samples as f64,
            objective: obj_sum / batches as f64,
            clip_fraction: clip_sum / batches as f64,
            holdout_exact_match: holdout,
            duplicate_rate: dups as f64 / samples as f64,
        });
    }
    Ok((params, log))
}
