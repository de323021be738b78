//! Rule-based step-by-step plan execution.
//!
//! Each step's call is built from the knowledge base (a validated template
//! with the dependency param rebound to the latest observation) or, in the
//! no-exploration ablation, guessed from the declared schema alone. Failed
//! calls are retried with the next template or a fresh guess; when a step's
//! attempts are exhausted execution aborts, since later steps need its output.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{KnowledgeBase, KnowledgeEntry};
use crate::plan::Plan;
use crate::seeding::{domain, stream};
use crate::toolworld::probe::pool_for;
use crate::toolworld::{invoke_tool, ArgMap, ArgValue, InvocationResult, Task, ToolCall, ToolWorld};

pub const DEFAULT_RETRY_BUDGET: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("knowledge base has no validated template for `{0}`")]
    NoTemplate(String),
    #[error("template index {index} out of range for `{tool}` ({available} templates)")]
    TemplateOutOfRange {
        tool: String,
        index: usize,
        available: usize,
    },
}

/// Builds the call for one step.
///
/// `kb_entry = None` selects schema-only guessing. Unknown tool names yield a
/// call with no arguments, which the environment rejects.
pub fn bind_arguments<R: Rng + ?Sized>(
    world: &ToolWorld,
    tool_name: &str,
    kb_entry: Option<&KnowledgeEntry>,
    history: &[i64],
    template_index: usize,
    rng: &mut R,
) -> Result<ToolCall, ExecError> {
    let Some(tool) = world.tool_by_name(tool_name) else {
        return Ok(ToolCall {
            tool_name: tool_name.to_string(),
            arguments: ArgMap::new(),
        });
    };
    let dep = tool.dependency_param.as_deref();
    let mut arguments = match kb_entry {
        Some(entry) => {
            let templates = &entry.validated_templates;
            if templates.is_empty() {
                return Err(ExecError::NoTemplate(tool_name.to_string()));
            }
            templates
                .get(template_index)
                .cloned()
                .ok_or_else(|| ExecError::TemplateOutOfRange {
                    tool: tool_name.to_string(),
                    index: template_index,
                    available: templates.len(),
                })?
        }
        None => tool
            .params
            .iter()
            .filter(|p| p.required && Some(p.name.as_str()) != dep)
            .map(|p| {
                let pool = pool_for(p.declared_type);
                (p.name.clone(), pool.choose(rng).expect("pools are non-empty").clone())
            })
            .collect(),
    };
    if let Some(dep) = dep {
        match history.last() {
            Some(&o) => arguments.insert(dep.to_string(), ArgValue::Int(o)),
            None => arguments.remove(dep),
        };
    }
    Ok(ToolCall {
        tool_name: tool_name.to_string(),
        arguments,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub call: ToolCall,
    pub result: InvocationResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub tool_name: String,
    pub attempts: Vec<Attempt>,
}

impl StepTrace {
    pub fn retries_used(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }

    pub fn final_result(&self) -> &InvocationResult {
        &self.attempts.last().expect("every reached step has an attempt").result
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<StepTrace>,
    pub final_output: Option<i64>,
    pub calls_attempted: usize,
    pub calls_errored: usize,
}

impl ExecutionTrace {
    /// One line per invocation: `step=<i> tool=<name> attempt=<j> outcome=<...>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            for (j, a) in s.attempts.iter().enumerate() {
                let outcome = match &a.result {
                    InvocationResult::Success(_) => "success".to_string(),
                    InvocationResult::Error { kind, .. } => format!("error:{kind}"),
                };
                let _ = writeln!(out, "step={} tool={} attempt={} outcome={}", i + 1, s.tool_name, j + 1, outcome);
            }
        }
        out
    }
}

/// Executes `plan` for `task`. Failures are recorded in the trace.
pub fn execute_plan(
    world: &ToolWorld,
    plan: &Plan,
    task: &Task,
    kb: Option<&KnowledgeBase>,
    retry_budget: usize,
) -> ExecutionTrace {
    let names: Vec<String> = plan
        .steps
        .iter()
        .map(|s| match world.tools.get(s.tool_id) {
            Some(t) => t.name.clone(),
            None => format!("tool#{}", s.tool_id),
        })
        .collect();
    execute_steps(world, &names, task.task_id, kb, retry_budget)
}

/// As [`execute_plan`] over tool names, which may name tools the world lacks.
pub fn execute_steps(
    world: &ToolWorld,
    tool_names: &[String],
    task_id: usize,
    kb: Option<&KnowledgeBase>,
    retry_budget: usize,
) -> ExecutionTrace {
    let mut rng = stream(&[domain::GUESS, world.seed, task_id as u64]);
    let mut trace = ExecutionTrace::default();
    let mut history: Vec<i64> = Vec::new();
    for name in tool_names {
        let entry = match kb {
            Some(kb) => world
                .tool_by_name(name)
                .and_then(|t| kb.entry(t.tool_id))
                .filter(|e| !e.validated_templates.is_empty()),
            None => None,
        };
        let mut step = StepTrace {
            tool_name: name.clone(),
            attempts: Vec::new(),
        };
        let mut output = None;
        for attempt in 0..=retry_budget {
            let index = entry.map_or(0, |e| attempt % e.validated_templates.len());
            // Tools the KB has no template for fall back to guessing.
            let call = bind_arguments(world, name, entry, &history, index, &mut rng)
                .expect("entry has templates and index is reduced modulo their count");
            let result = invoke_tool(world, &call, history.last().copied());
            trace.calls_attempted += 1;
            output = result.output();
            if output.is_none() {
                trace.calls_errored += 1;
            }
            step.attempts.push(Attempt { call, result });
            if output.is_some() {
                break;
            }
        }
        trace.steps.push(step);
        match output {
            Some(o) => history.push(o),
            None => return trace,
        }
    }
    trace.final_output = if tool_names.is_empty() { None } else { history.last().copied() };
    trace
}
