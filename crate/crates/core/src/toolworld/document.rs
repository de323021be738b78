//! JSON persistence for worlds and task sets, plus invariant validation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{probe, topological_order, AnswerFn, Task, ToolSpec, ToolWorld, WorldError};
use crate::canonical_json::to_canonical_string;

pub const WORLD_FORMAT_VERSION: u64 = 1;

/// On-disk layout shared by world files and task files (which add `tasks`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldDocument {
    pub version: u64,
    pub seed: u64,
    pub feature_dim: usize,
    pub max_depth: usize,
    #[serde(default)]
    pub answer_fn: AnswerFn,
    pub tools: Vec<ToolSpec>,
    pub chain_graph: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<Task>>,
}

impl WorldDocument {
    pub fn new(world: &ToolWorld, tasks: Option<&[Task]>) -> Self {
        Self {
            version: WORLD_FORMAT_VERSION,
            seed: world.seed,
            feature_dim: world.feature_dim,
            max_depth: world.max_depth,
            answer_fn: world.answer_fn,
            tools: world.tools.clone(),
            chain_graph: world.chain_graph.clone(),
            tasks: tasks.map(<[Task]>::to_vec),
        }
    }

    pub fn to_json(&self) -> String {
        to_canonical_string(self).expect("world documents contain only finite reals")
    }

    /// Parses and validates a document, returning the world and any embedded tasks.
    pub fn parse(document: &str) -> Result<(ToolWorld, Option<Vec<Task>>), WorldError> {
        let doc: WorldDocument = serde_json::from_str(document)?;
        if doc.version != WORLD_FORMAT_VERSION {
            return Err(WorldError::UnsupportedVersion(doc.version));
        }
        let world = ToolWorld {
            seed: doc.seed,
            feature_dim: doc.feature_dim,
            max_depth: doc.max_depth,
            tools: doc.tools,
            chain_graph: doc.chain_graph,
            answer_fn: doc.answer_fn,
        };
        world.validate()?;
        if let Some(tasks) = &doc.tasks {
            for task in tasks {
                world.validate_task(task)?;
            }
        }
        Ok((world, doc.tasks))
    }
}

pub fn save_world(world: &ToolWorld) -> String {
    WorldDocument::new(world, None).to_json()
}

pub fn load_world(document: &str) -> Result<ToolWorld, WorldError> {
    WorldDocument::parse(document).map(|(world, _)| world)
}

fn violated(msg: impl Into<String>) -> WorldError {
    WorldError::Invariant(msg.into())
}

impl ToolWorld {
    /// Checks every structural invariant; the error names the first one violated.
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.tools.is_empty() {
            return Err(violated("world has no tools"));
        }
        if self.feature_dim == 0 {
            return Err(violated("feature_dim must be positive"));
        }
        if self.max_depth < 2 {
            return Err(violated("max_depth must be at least 2"));
        }

        let mut names = HashSet::new();
        for (idx, tool) in self.tools.iter().enumerate() {
            if tool.tool_id != idx {
                return Err(violated(format!(
                    "tool ids must be dense indices: position {idx} holds id {}",
                    tool.tool_id
                )));
            }
            if !names.insert(tool.name.as_str()) {
                return Err(violated(format!("duplicate tool name `{}`", tool.name)));
            }
            validate_tool(tool)?;
        }

        let n = self.tools.len();
        if self.chain_graph.len() != n {
            return Err(violated(format!(
                "chain_graph has {} adjacency rows for {n} tools",
                self.chain_graph.len()
            )));
        }
        for (u, succ) in self.chain_graph.iter().enumerate() {
            let mut seen = HashSet::new();
            for &v in succ {
                if v >= n {
                    return Err(violated(format!("chain_graph edge {u} -> {v} out of range")));
                }
                if !seen.insert(v) {
                    return Err(violated(format!("duplicate chain_graph edge {u} -> {v}")));
                }
            }
        }
        if topological_order(&self.chain_graph).is_none() {
            return Err(violated("acyclicity violated"));
        }

        let incoming = self.has_in_edges();
        for tool in &self.tools {
            let id = tool.tool_id;
            match (tool.dependency_param.is_some(), incoming[id]) {
                (true, false) => {
                    return Err(violated(format!(
                        "tool `{}` declares a dependency param but no tool feeds it",
                        tool.name
                    )))
                }
                (false, true) => {
                    return Err(violated(format!(
                        "tool `{}` has upstream edges but no dependency param",
                        tool.name
                    )))
                }
                _ => {}
            }
            if !incoming[id] && self.chain_graph[id].is_empty() {
                return Err(violated(format!(
                    "multi-hop reachability violated: tool `{}` is on no chain of length >= 2",
                    tool.name
                )));
            }
        }
        let longest = self.longest_chain();
        if longest < self.max_depth {
            return Err(violated(format!(
                "longest chain has {longest} tools, fewer than max_depth {}",
                self.max_depth
            )));
        }
        Ok(())
    }

    /// Checks a task against this world: feature width, plan shape and answer.
    pub fn validate_task(&self, task: &Task) -> Result<(), WorldError> {
        let id = task.task_id;
        if task.features.len() != self.feature_dim {
            return Err(violated(format!(
                "task {id} has {} features, world expects {}",
                task.features.len(),
                self.feature_dim
            )));
        }
        if task.features.iter().any(|f| !f.is_finite()) {
            return Err(violated(format!("task {id} has non-finite features")));
        }
        let m = task.truth_plan.len();
        if m < 2 || m > self.max_depth {
            return Err(violated(format!(
                "task {id} truth plan length {m} outside [2, {}]",
                self.max_depth
            )));
        }
        let tools = task.truth_tools();
        if !self.is_chain_path(&tools) {
            return Err(violated(format!("task {id} truth plan is not a chain_graph path")));
        }
        if self.execute_faithfully(&tools)? != task.answer {
            return Err(violated(format!(
                "task {id} answer differs from faithful execution"
            )));
        }
        Ok(())
    }
}

fn validate_tool(tool: &ToolSpec) -> Result<(), WorldError> {
    let mut params = HashSet::new();
    for p in &tool.params {
        if !params.insert(p.name.as_str()) {
            return Err(violated(format!(
                "tool `{}` declares param `{}` twice",
                tool.name, p.name
            )));
        }
    }
    if let Some(dep) = &tool.dependency_param {
        match tool.param(dep) {
            None => {
                return Err(violated(format!(
                    "tool `{}` dependency_param `{dep}` is not a declared param",
                    tool.name
                )))
            }
            Some(p) if p.declared_type != super::DeclaredType::Integer || !p.required => {
                return Err(violated(format!(
                    "tool `{}` dependency_param `{dep}` must be a required integer",
                    tool.name
                )))
            }
            Some(_) => {}
        }
    }
    for c in &tool.hidden_constraints {
        let Some(p) = tool.param(&c.param_name) else {
            return Err(violated(format!(
                "tool `{}` hidden constraint references undeclared param `{}`",
                tool.name, c.param_name
            )));
        };
        if tool.dependency_param.as_deref() == Some(c.param_name.as_str()) {
            return Err(violated(format!(
                "tool `{}` hides a constraint on its dependency param",
                tool.name
            )));
        }
        if !c.rule.is_non_empty() {
            return Err(violated(format!(
                "tool `{}` hidden constraint on `{}` has an empty payload",
                tool.name, c.param_name
            )));
        }
        if !probe::pool_for(p.declared_type).iter().any(|v| c.rule.admits(v)) {
            return Err(violated(format!(
                "tool `{}` hidden constraint on `{}` admits no probe value",
                tool.name, c.param_name
            )));
        }
    }
    Ok(())
}
