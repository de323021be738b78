//! End-to-end evaluation, baselines and ablations.
//!
//! Success rate counts tasks whose final answer equals the ground truth.
//! Invocation error rate is errored calls over all attempted calls, retries
//! included. Both are recomputed from integer counters.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::execute_plan;
use crate::explorer::{build_knowledge_base, ExploreConfig, ExploreError, KnowledgeBase};
use crate::grpo::{train, GrpoError, TrainConfig};
use crate::plan::{Plan, PlanStep};
use crate::planner::{greedy_plan, PlannerError, PlannerParams, PlannerShape};
use crate::reward::RewardKind;
use crate::seeding::{domain, stream};
use crate::toolworld::{Task, ToolWorld};

use rand::seq::SliceRandom;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("need at least 2 tasks to split, got {0}")]
    TooFewTasks(usize),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Training(#[from] GrpoError),
    #[error(transparent)]
    Exploration(#[from] ExploreError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_rate: f64,
    pub invocation_error_rate: f64,
    pub tasks_total: usize,
    pub tasks_succeeded: usize,
    pub calls_attempted: usize,
    pub calls_errored: usize,
    pub plan_exact_match_rate: f64,
    pub plans_exact: usize,
}

impl Metrics {
    pub fn from_counts(
        tasks_total: usize,
        tasks_succeeded: usize,
        calls_attempted: usize,
        calls_errored: usize,
        plans_exact: usize,
    ) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            success_rate: ratio(tasks_succeeded, tasks_total),
            invocation_error_rate: ratio(calls_errored, calls_attempted),
            tasks_total,
            tasks_succeeded,
            calls_attempted,
            calls_errored,
            plan_exact_match_rate: ratio(plans_exact, tasks_total),
            plans_exact,
        }
    }
}

/// Anything that emits a complete plan for a task before execution.
pub trait PlanSource {
    fn plan_for(&self, world: &ToolWorld, task: &Task) -> Result<Plan, HarnessError>;
}

/// Greedy decoding of a trained planner.
impl PlanSource for PlannerParams {
    fn plan_for(&self, world: &ToolWorld, task: &Task) -> Result<Plan, HarnessError> {
        Ok(greedy_plan(self, world, task)?)
    }
}

/// Emits the ground-truth plan.
pub struct OraclePlanner;

impl PlanSource for OraclePlanner {
    fn plan_for(&self, world: &ToolWorld, task: &Task) -> Result<Plan, HarnessError> {
        Ok(Plan::from_tools(world, &task.truth_tools()))
    }
}

/// Uniform tools with geometric stopping, seeded per task.
pub struct RandomPlanner {
    pub seed: u64,
    pub depth_range: (usize, usize),
    pub max_steps: usize,
}

impl PlanSource for RandomPlanner {
    fn plan_for(&self, world: &ToolWorld, task: &Task) -> Result<Plan, HarnessError> {
        let mut rng = stream(&[domain::BASELINE, self.seed, task.task_id as u64]);
        Ok(random_baseline_plan(world, self.depth_range, self.max_steps, &mut rng))
    }
}

/// Uniform tool per step; before each step the plan stops with probability
/// `1 / (mean_depth + 1)`, so the uncapped length has the depth range's mean.
pub fn random_baseline_plan<R: Rng + ?Sized>(
    world: &ToolWorld,
    depth_range: (usize, usize),
    max_steps: usize,
    rng: &mut R,
) -> Plan {
    let mean_depth = (depth_range.0 + depth_range.1) as f64 / 2.0;
    let stop = 1.0 / (mean_depth + 1.0);
    let mut steps = Vec::new();
    while steps.len() < max_steps && !rng.random_bool(stop) {
        let tool = rng.random_range(0..world.num_tools());
        steps.push(PlanStep::templated(steps.len() + 1, tool, world.tool_name(tool)));
    }
    Plan { steps }
}

pub fn evaluate(
    world: &ToolWorld,
    tasks: &[Task],
    planner: &PlannerParams,
    kb: Option<&KnowledgeBase>,
    retry_budget: usize,
) -> Result<Metrics, HarnessError> {
    evaluate_with(world, tasks, planner, kb, retry_budget)
}

pub fn evaluate_with<P: PlanSource + ?Sized>(
    world: &ToolWorld,
    tasks: &[Task],
    planner: &P,
    kb: Option<&KnowledgeBase>,
    retry_budget: usize,
) -> Result<Metrics, HarnessError> {
    Ok(evaluate_plans(world, tasks, planner, kb, retry_budget)?.0)
}

/// Metrics together with the plan emitted for each task.
pub fn evaluate_plans<P: PlanSource + ?Sized>(
    world: &ToolWorld,
    tasks: &[Task],
    planner: &P,
    kb: Option<&KnowledgeBase>,
    retry_budget: usize,
) -> Result<(Metrics, Vec<Plan>), HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let (mut succeeded, mut attempted, mut errored, mut exact) = (0, 0, 0, 0);
    let mut plans = Vec::with_capacity(tasks.len());
    for task in tasks {
        let plan = planner.plan_for(world, task)?;
        let trace = execute_plan(world, &plan, task, kb, retry_budget);
        if trace.final_output.map(|o| world.answer_fn.apply(o)) == Some(task.answer) {
            succeeded += 1;
        }
        attempted += trace.calls_attempted;
        errored += trace.calls_errored;
        if plan.matches_tools(&task.truth_plan) {
            exact += 1;
        }
        plans.push(plan);
    }
    let metrics = Metrics::from_counts(tasks.len(), succeeded, attempted, errored, exact);
    Ok((metrics, plans))
}

/// Seeded 80/20 train/eval partition. Both parts are non-empty.
pub fn split_tasks(tasks: &[Task], seed: u64) -> Result<(Vec<Task>, Vec<Task>), HarnessError> {
    if tasks.len() < 2 {
        return Err(HarnessError::TooFewTasks(tasks.len()));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut stream(&[domain::SPLIT, seed]));
    let n_eval = ((tasks.len() as f64 * 0.2).round() as usize).clamp(1, tasks.len() - 1);
    let (eval_idx, train_idx) = order.split_at(n_eval);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| tasks[i].clone()).collect::<Vec<_>>()
    };
    Ok((pick(train_idx), pick(eval_idx)))
}

/// Planner horizon: no ground-truth chain is longer than the world's depth.
pub fn default_shape(world: &ToolWorld) -> PlannerShape {
    PlannerShape::for_world(world, world.max_depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    NoPlanningReward,
    NoExploration,
}

impl std::str::FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_planning_reward" => Ok(Self::NoPlanningReward),
            "no_exploration" => Ok(Self::NoExploration),
            other => Err(format!(
                "unknown ablation `{other}` (expected no_planning_reward|no_exploration)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub init_seed: u64,
    pub explore_rounds: usize,
    pub explore_seed: u64,
    pub retry_budget: usize,
    pub split_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            init_seed: 0,
            explore_rounds: 10,
            explore_seed: 0,
            retry_budget: crate::executor::DEFAULT_RETRY_BUDGET,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variant_name: AblationVariant,
    pub baseline: Metrics,
    pub variant: Metrics,
    pub direction_holds: bool,
}

/// Trains with the dense reward and evaluates with the knowledge base, then
/// reruns with one component removed under identical seeds.
pub fn run_ablation(
    world: &ToolWorld,
    tasks: &[Task],
    config: &AblationConfig,
    which: AblationVariant,
) -> Result<AblationReport, HarnessError> {
    let (train_set, eval_set) = split_tasks(tasks, config.split_seed)?;
    let initial = PlannerParams::init_gaussian(default_shape(world), config.init_seed);
    let kb = build_knowledge_base(
        world,
        &ExploreConfig::with_rounds(config.explore_rounds),
        config.explore_seed,
    )?;
    let (dense, _) = train(world, &train_set, &[], &initial, RewardKind::Dense, &config.train)?;
    let baseline = evaluate(world, &eval_set, &dense, Some(&kb), config.retry_budget)?;
    let (variant, direction_holds) = match which {
        AblationVariant::NoPlanningReward => {
            let (sparse, _) = train(world, &train_set, &[], &initial, RewardKind::Sparse, &config.train)?;
            let m = evaluate(world, &eval_set, &sparse, Some(&kb), config.retry_budget)?;
            let holds = m.success_rate < baseline.success_rate;
            (m, holds)
        }
        AblationVariant::NoExploration => {
            let m = evaluate(world, &eval_set, &dense, None, config.retry_budget)?;
            let holds = m.invocation_error_rate > baseline.invocation_error_rate;
            (m, holds)
        }
    };
    Ok(AblationReport {
        variant_name: which,
        baseline,
        variant,
        direction_holds,
    })
}
