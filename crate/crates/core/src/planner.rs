//! Autoregressive linear-softmax planner over tools plus an explicit STOP.
//!
//! At step `i` the policy sees `[query features ‖ one_hot(previous tool) ‖
//! one_hot(i)]` (the middle block is zero at the first step) and emits a
//! categorical distribution over `num_tools + 1` actions, the last being STOP.
//! Log-probabilities and their gradients are exact.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical_json::to_canonical_string;
use crate::plan::{Plan, PlanStep};
use crate::seeding::{domain, stream};
use crate::toolworld::{Task, ToolWorld};

pub const CHECKPOINT_VERSION: u64 = 1;
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("step index {step} outside [0, {max_steps})")]
    StepOutOfRange { step: usize, max_steps: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("tool id {0} out of range")]
    ToolOutOfRange(usize),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerShape {
    pub feature_dim: usize,
    pub num_tools: usize,
    pub max_steps: usize,
}

impl PlannerShape {
    pub fn for_world(world: &ToolWorld, max_steps: usize) -> Self {
        Self {
            feature_dim: world.feature_dim,
            num_tools: world.num_tools(),
            max_steps,
        }
    }

    /// Width of the featurized context.
    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.num_tools + self.max_steps
    }

    pub fn num_actions(&self) -> usize {
        self.num_tools + 1
    }

    pub fn stop_action(&self) -> usize {
        self.num_tools
    }
}

/// Dense row-major matrix, used for both weights and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// `self += scale * outer(x, v)`.
    pub fn add_outer(&mut self, scale: f64, x: &[f64], v: &[f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &vc) in row.iter_mut().zip(v) {
                *w += scale * xr * vc;
            }
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &WeightMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Immutable parameter snapshot. Updates produce a new snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerParams {
    shape: PlannerShape,
    weights: WeightMatrix,
}

impl PlannerParams {
    pub fn zeros(shape: PlannerShape) -> Self {
        Self {
            shape,
            weights: WeightMatrix::zeros(shape.input_dim(), shape.num_actions()),
        }
    }

    /// Seeded N(0, `INIT_STD`^2) weights: a near-uniform starting policy.
    pub fn init_gaussian(shape: PlannerShape, seed: u64) -> Self {
        let mut rng = stream(&[domain::INIT, seed]);
        let mut params = Self::zeros(shape);
        for w in params.weights.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = INIT_STD * z;
        }
        params
    }

    pub fn from_weights(shape: PlannerShape, weights: WeightMatrix) -> Result<Self, PlannerError> {
        if weights.rows() != shape.input_dim() || weights.cols() != shape.num_actions() {
            return Err(PlannerError::DimensionMismatch {
                expected: shape.input_dim() * shape.num_actions(),
                actual: weights.rows() * weights.cols(),
            });
        }
        if !weights.is_finite() {
            return Err(PlannerError::InvalidCheckpoint("non-finite weight".into()));
        }
        Ok(Self { shape, weights })
    }

    pub fn shape(&self) -> PlannerShape {
        self.shape
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    /// New snapshot `θ + step * direction`.
    pub fn stepped(&self, step: f64, direction: &WeightMatrix) -> Self {
        let mut weights = self.weights.clone();
        weights.add_scaled(step, direction);
        Self {
            shape: self.shape,
            weights,
        }
    }

    fn logits_into(&self, features: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.shape.num_actions(), 0.0);
        for (r, &x) in features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights.data[r * self.weights.cols..(r + 1) * self.weights.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }
}

pub fn featurize(
    shape: PlannerShape,
    task: &Task,
    step_index: usize,
    prev_tool: Option<usize>,
) -> Result<Vec<f64>, PlannerError> {
    if step_index >= shape.max_steps {
        return Err(PlannerError::StepOutOfRange {
            step: step_index,
            max_steps: shape.max_steps,
        });
    }
    if task.features.len() != shape.feature_dim {
        return Err(PlannerError::DimensionMismatch {
            expected: shape.feature_dim,
            actual: task.features.len(),
        });
    }
    let mut x = vec![0.0; shape.input_dim()];
    x[..shape.feature_dim].copy_from_slice(&task.features);
    if let Some(t) = prev_tool {
        if t >= shape.num_tools {
            return Err(PlannerError::ToolOutOfRange(t));
        }
        x[shape.feature_dim + t] = 1.0;
    }
    x[shape.feature_dim + shape.num_tools + step_index] = 1.0;
    Ok(x)
}

/// Log-softmax of `logits`, computed stably.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn step_distribution(params: &PlannerParams, features: &[f64]) -> Result<Vec<f64>, PlannerError> {
    if features.len() != params.shape.input_dim() {
        return Err(PlannerError::DimensionMismatch {
            expected: params.shape.input_dim(),
            actual: features.len(),
        });
    }
    let mut logits = Vec::new();
    params.logits_into(features, &mut logits);
    Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledPlan {
    pub plan: Plan,
    /// `log π(plan | query)`, including the STOP decision when one was sampled.
    pub log_prob: f64,
    /// False when sampling hit `max_steps` without choosing STOP.
    pub stopped_naturally: bool,
}

/// Draws one plan by ancestral sampling.
pub fn sample_plan<R: Rng + ?Sized>(
    params: &PlannerParams,
    world: &ToolWorld,
    task: &Task,
    max_steps: usize,
    rng: &mut R,
) -> Result<SampledPlan, PlannerError> {
    let shape = params.shape;
    let horizon = max_steps.min(shape.max_steps);
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = None;
    let mut logits = Vec::new();
    for i in 0..horizon {
        let x = featurize(shape, task, i, prev)?;
        params.logits_into(&x, &mut logits);
        let logp = log_softmax(&logits);
        let action = sample_categorical(&logp, rng);
        log_prob += logp[action];
        if action == shape.stop_action() {
            return Ok(SampledPlan {
                plan: Plan { steps },
                log_prob,
                stopped_naturally: true,
            });
        }
        steps.push(PlanStep::templated(i + 1, action, world.tool_name(action)));
        prev = Some(action);
    }
    Ok(SampledPlan {
        plan: Plan { steps },
        log_prob,
        stopped_naturally: false,
    })
}

fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return a;
        }
    }
    log_probs.len() - 1
}

/// Replays `plan` through the policy, handing each decision's context,
/// log-probabilities and chosen action to `visit`.
fn replay(
    params: &PlannerParams,
    task: &Task,
    plan: &Plan,
    stopped_naturally: bool,
    mut visit: impl FnMut(&[f64], &[f64], usize),
) -> Result<(), PlannerError> {
    let shape = params.shape;
    if plan.len() > shape.max_steps {
        return Err(PlannerError::InvalidPlan(format!(
            "{} steps exceed max_steps {}",
            plan.len(),
            shape.max_steps
        )));
    }
    if stopped_naturally && plan.len() == shape.max_steps {
        return Err(PlannerError::InvalidPlan(
            "a plan of max_steps length cannot also end with STOP".into(),
        ));
    }
    let mut prev = None;
    let mut logits = Vec::new();
    let decisions = plan
        .steps
        .iter()
        .map(|s| s.tool_id)
        .chain(stopped_naturally.then_some(shape.stop_action()));
    for (i, action) in decisions.enumerate() {
        if action > shape.stop_action() || (action == shape.stop_action() && i < plan.len()) {
            return Err(PlannerError::ToolOutOfRange(action));
        }
        let x = featurize(shape, task, i, prev)?;
        params.logits_into(&x, &mut logits);
        let logp = log_softmax(&logits);
        visit(&x, &logp, action);
        prev = Some(action);
    }
    Ok(())
}

pub fn plan_log_prob(
    params: &PlannerParams,
    task: &Task,
    plan: &Plan,
    stopped_naturally: bool,
) -> Result<f64, PlannerError> {
    let mut total = 0.0;
    replay(params, task, plan, stopped_naturally, |_, logp, a| total += logp[a])?;
    Ok(total)
}

/// `∇θ log π(plan | query)`: the sum over decisions of
/// `outer(context, one_hot(action) - probs)`.
pub fn log_prob_gradient(
    params: &PlannerParams,
    task: &Task,
    plan: &Plan,
    stopped_naturally: bool,
) -> Result<WeightMatrix, PlannerError> {
    let shape = params.shape;
    let mut grad = WeightMatrix::zeros(shape.input_dim(), shape.num_actions());
    accumulate_log_prob_gradient(params, task, plan, stopped_naturally, 1.0, &mut grad)?;
    Ok(grad)
}

/// `grad += scale * ∇θ log π(plan | query)`.
pub(crate) fn accumulate_log_prob_gradient(
    params: &PlannerParams,
    task: &Task,
    plan: &Plan,
    stopped_naturally: bool,
    scale: f64,
    grad: &mut WeightMatrix,
) -> Result<(), PlannerError> {
    let mut residual = Vec::new();
    replay(params, task, plan, stopped_naturally, |x, logp, a| {
        residual.clear();
        residual.extend(logp.iter().map(|lp| -lp.exp()));
        residual[a] += 1.0;
        grad.add_outer(scale, x, &residual);
    })
}

/// Argmax decoding (ties go to the lowest action index), STOP included.
pub fn greedy_plan(params: &PlannerParams, world: &ToolWorld, task: &Task) -> Result<Plan, PlannerError> {
    let shape = params.shape;
    let mut steps = Vec::new();
    let mut prev = None;
    let mut logits = Vec::new();
    for i in 0..shape.max_steps {
        let x = featurize(shape, task, i, prev)?;
        params.logits_into(&x, &mut logits);
        let mut best = 0;
        for (a, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = a;
            }
        }
        if best == shape.stop_action() {
            break;
        }
        steps.push(PlanStep::templated(i + 1, best, world.tool_name(best)));
        prev = Some(best);
    }
    Ok(Plan { steps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerCheckpoint {
    pub version: u64,
    pub feature_dim_total: usize,
    pub num_tools: usize,
    pub max_steps: usize,
    /// Row-major `feature_dim_total × (num_tools + 1)`.
    pub weights: Vec<f64>,
}

impl PlannerCheckpoint {
    pub fn from_params(params: &PlannerParams) -> Self {
        let shape = params.shape;
        Self {
            version: CHECKPOINT_VERSION,
            feature_dim_total: shape.input_dim(),
            num_tools: shape.num_tools,
            max_steps: shape.max_steps,
            weights: params.weights.as_slice().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        to_canonical_string(self).expect("checkpoint weights are finite")
    }

    pub fn into_params(self) -> Result<PlannerParams, PlannerError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PlannerError::InvalidCheckpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let fixed = self.num_tools + self.max_steps;
        if self.feature_dim_total <= fixed || self.max_steps == 0 || self.num_tools == 0 {
            return Err(PlannerError::InvalidCheckpoint(format!(
                "feature_dim_total {} incompatible with {} tools and {} steps",
                self.feature_dim_total, self.num_tools, self.max_steps
            )));
        }
        let shape = PlannerShape {
            feature_dim: self.feature_dim_total - fixed,
            num_tools: self.num_tools,
            max_steps: self.max_steps,
        };
        let weights = WeightMatrix::from_row_major(shape.input_dim(), shape.num_actions(), self.weights)
            .ok_or_else(|| PlannerError::InvalidCheckpoint("weight count does not match shape".into()))?;
        PlannerParams::from_weights(shape, weights)
    }
}

pub fn save_checkpoint(params: &PlannerParams) -> String {
    PlannerCheckpoint::from_params(params).to_json()
}

pub fn load_checkpoint(document: &str) -> Result<PlannerParams, PlannerError> {
    let ckpt: PlannerCheckpoint = serde_json::from_str(document)
        .map_err(|e| PlannerError::InvalidCheckpoint(e.to_string()))?;
    ckpt.into_params()
}
