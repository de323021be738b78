//! Plans: ordered (sub-query, tool) steps produced before any execution.

use serde::{Deserialize, Serialize};

use crate::toolworld::ToolWorld;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub sub_query: Vec<String>,
    pub tool_id: usize,
}

impl PlanStep {
    /// Sub-query template for step `index` (1-based): `["step", i, "use", name]`.
    pub fn templated(index: usize, tool_id: usize, tool_name: &str) -> Self {
        Self {
            sub_query: vec![
                "step".into(),
                index.to_string(),
                "use".into(),
                tool_name.to_string(),
            ],
            tool_id,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn from_tools(world: &ToolWorld, tools: &[usize]) -> Self {
        Self {
            steps: tools
                .iter()
                .enumerate()
                .map(|(i, &t)| PlanStep::templated(i + 1, t, world.tool_name(t)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tool_ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.tool_id).collect()
    }

    /// Same tools in the same positions, same length.
    pub fn matches_tools(&self, truth: &[PlanStep]) -> bool {
        self.steps.len() == truth.len()
            && self.steps.iter().zip(truth).all(|(a, b)| a.tool_id == b.tool_id)
    }
}
