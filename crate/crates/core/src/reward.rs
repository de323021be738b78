//! Plan-structural rewards.
//!
//! The dense reward gives `1/m` for every step whose tool matches the truth
//! plan's tool at the same position (within the first `m` steps), where `m` is
//! the truth length. A plan's reward is the sum over its steps. The sparse
//! variant pays 1 only for an exact, same-length match.
//!
//! Note that an over-long plan with a fully correct prefix still earns 1 under
//! the dense reward; only the sparse variant distinguishes it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{Plan, PlanStep};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("step index {index} outside plan of length {len} (indices are 1-based)")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub per_step: Vec<f64>,
    pub total: f64,
}

/// Reward of step `i` (1-based).
pub fn step_reward(plan: &Plan, truth: &[PlanStep], i: usize) -> Result<f64, RewardError> {
    if i == 0 || i > plan.len() {
        return Err(RewardError::IndexOutOfRange {
            index: i,
            len: plan.len(),
        });
    }
    Ok(step_value(plan.steps[i - 1].tool_id, truth, i))
}

fn step_value(tool_id: usize, truth: &[PlanStep], i: usize) -> f64 {
    let m = truth.len();
    if i <= m && truth[i - 1].tool_id == tool_id {
        1.0 / m as f64
    } else {
        0.0
    }
}

pub fn plan_reward(plan: &Plan, truth: &[PlanStep]) -> RewardBreakdown {
    let per_step: Vec<f64> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(idx, s)| step_value(s.tool_id, truth, idx + 1))
        .collect();
    let total = per_step.iter().sum();
    RewardBreakdown { per_step, total }
}

pub fn sparse_reward(plan: &Plan, truth: &[PlanStep]) -> f64 {
    if plan.matches_tools(truth) {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Dense,
    Sparse,
}

impl RewardKind {
    pub fn score(self, plan: &Plan, truth: &[PlanStep]) -> f64 {
        match self {
            RewardKind::Dense => plan_reward(plan, truth).total,
            RewardKind::Sparse => sparse_reward(plan, truth),
        }
    }
}

impl std::str::FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(RewardKind::Dense),
            "sparse" => Ok(RewardKind::Sparse),
            other => Err(format!("unknown reward `{other}` (expected dense|sparse)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan(tools: &[usize]) -> Plan {
        Plan {
            steps: tools
                .iter()
                .map(|&t| PlanStep {
                    sub_query: vec![],
                    tool_id: t,
                })
                .collect(),
        }
    }

    fn truth(tools: &[usize]) -> Vec<PlanStep> {
        plan(tools).steps
    }

    #[test]
    fn single_step_values() {
        let t = truth(&[3, 1, 4, 1]);
        assert_eq!(step_reward(&plan(&[0, 1, 0, 0]), &t, 2), Ok(0.25));
        assert_eq!(step_reward(&plan(&[2, 1, 4, 1]), &t, 1), Ok(0.0));
        assert_eq!(step_reward(&plan(&[3, 1, 4, 1, 1]), &t, 5), Ok(0.0));
        assert!(step_reward(&plan(&[3]), &t, 2).is_err());
        assert!(step_reward(&plan(&[3]), &t, 0).is_err());
    }

    #[test]
    fn plan_totals() {
        let t = truth(&[3, 1, 4, 1]);
        assert_eq!(plan_reward(&plan(&[3, 1, 4, 1]), &t).total, 1.0);
        assert_eq!(plan_reward(&plan(&[]), &t).total, 0.0);
        assert_eq!(plan_reward(&plan(&[3, 1, 0, 0]), &t).total, 0.5);
        assert_eq!(plan_reward(&plan(&[3, 1, 4, 1]), &t).per_step, vec![0.25; 4]);
    }

    #[test]
    fn sparse_and_dense_diverge_on_long_plans() {
        assert_eq!(sparse_reward(&plan(&[0, 1, 2]), &truth(&[0, 1, 2])), 1.0);
        assert_eq!(sparse_reward(&plan(&[0, 1, 3]), &truth(&[0, 1, 2])), 0.0);
        let t = truth(&[0, 1, 2, 3]);
        let long = plan(&[0, 1, 2, 3, 0]);
        assert_eq!(sparse_reward(&long, &t), 0.0);
        assert_eq!(plan_reward(&long, &t).total, 1.0);
    }

    fn tools_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..6, 0..8)
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(p in tools_strategy(), t in prop::collection::vec(0usize..6, 1..6), extra in 0usize..6) {
            let t = truth(&t);
            let r = plan_reward(&plan(&p), &t);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r.total));
            let sum: f64 = r.per_step.iter().sum();
            prop_assert_eq!(sum, r.total);
            let m = t.len() as f64;
            for &x in &r.per_step {
                prop_assert!(x == 0.0 || x == 1.0 / m);
            }
            let mut longer = p.clone();
            longer.push(extra);
            prop_assert!(plan_reward(&plan(&longer), &t).total >= r.total);
        }

        #[test]
        fn maximal_iff_correct_prefix(p in tools_strategy(), t in prop::collection::vec(0usize..3, 1..4)) {
            let tr = truth(&t);
            let full = (plan_reward(&plan(&p), &tr).total - 1.0).abs() < 1e-12;
            let prefix = p.len() >= t.len() && p[..t.len()] == t[..];
            prop_assert_eq!(full, prefix);
        }
    }
}
