//! Simulated tool ecosystem: tool specs with hidden argument constraints, a
//! dependency DAG over tools, deterministic invocation semantics and a
//! multi-hop task generator.

mod document;
mod generate;
pub mod probe;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::PlanStep;
use crate::seeding::{domain, mix};

pub use document::{load_world, save_world, WorldDocument, WORLD_FORMAT_VERSION};
pub use generate::{generate_tasks, generate_world, WorldConfig};

/// Argument or output value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Int(i64),
    Real(f64),
    Str(String),
}

impl ArgValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ArgValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Real(v) => write!(f, "{v}"),
            ArgValue::Str(s) => f.write_str(s),
        }
    }
}

/// Arguments keyed by param name; iteration order is lexicographic.
pub type ArgMap = BTreeMap<String, ArgValue>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredType {
    Integer,
    Real,
    String,
    /// A string param whose admissible values are not advertised.
    EnumHintAbsent,
}

impl DeclaredType {
    pub fn accepts(self, value: &ArgValue) -> bool {
        matches!(
            (self, value),
            (DeclaredType::Integer, ArgValue::Int(_))
                | (DeclaredType::Real, ArgValue::Real(_) | ArgValue::Int(_))
                | (DeclaredType::String | DeclaredType::EnumHintAbsent, ArgValue::Str(_))
        )
    }

    fn token(self) -> &'static str {
        match self {
            DeclaredType::Integer => "integer",
            DeclaredType::Real => "real",
            DeclaredType::String | DeclaredType::EnumHintAbsent => "text",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    pub declared_type: DeclaredType,
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ConstraintRule {
    EnumMembership(Vec<String>),
    IntegerRange { min: i64, max: i64 },
    /// Glob over the string value (`?` one char, `*` any run).
    StringFormat(String),
}

impl ConstraintRule {
    pub fn admits(&self, value: &ArgValue) -> bool {
        match (self, value) {
            (ConstraintRule::EnumMembership(allowed), ArgValue::Str(s)) => allowed.contains(s),
            (ConstraintRule::IntegerRange { min, max }, ArgValue::Int(v)) => (min..=max).contains(&v),
            (ConstraintRule::StringFormat(pattern), ArgValue::Str(s)) => probe::glob_match(pattern, s),
            _ => false,
        }
    }

    /// Tokens that would leak the constraint if they appeared in a description.
    pub fn payload_tokens(&self) -> Vec<String> {
        match self {
            ConstraintRule::EnumMembership(allowed) => allowed.clone(),
            ConstraintRule::IntegerRange { min, max } => vec![min.to_string(), max.to_string()],
            ConstraintRule::StringFormat(pattern) => vec![pattern.clone()],
        }
    }

    fn is_non_empty(&self) -> bool {
        match self {
            ConstraintRule::EnumMembership(allowed) => !allowed.is_empty(),
            ConstraintRule::IntegerRange { min, max } => min <= max,
            ConstraintRule::StringFormat(pattern) => !pattern.is_empty(),
        }
    }

    /// Fraction of the probe pool for `declared` admitted by this rule.
    pub fn probe_density(&self, declared: DeclaredType) -> f64 {
        let pool = probe::pool_for(declared);
        pool.iter().filter(|v| self.admits(v)).count() as f64 / pool.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenConstraint {
    pub param_name: String,
    pub rule: ConstraintRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Count,
    Identifier,
    Measure,
    Code,
}

impl OutputKind {
    pub const ALL: [OutputKind; 4] = [
        OutputKind::Count,
        OutputKind::Identifier,
        OutputKind::Measure,
        OutputKind::Code,
    ];

    fn token(self) -> &'static str {
        match self {
            OutputKind::Count => "count",
            OutputKind::Identifier => "identifier",
            OutputKind::Measure => "measure",
            OutputKind::Code => "code",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: usize,
    pub name: String,
    pub description: Vec<String>,
    pub params: Vec<ParamSchema>,
    pub hidden_constraints: Vec<HiddenConstraint>,
    pub output_kind: OutputKind,
    pub dependency_param: Option<String>,
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSchema> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Builds the public description from the declared surface only.
    pub fn describe(name: &str, params: &[ParamSchema], output_kind: OutputKind) -> Vec<String> {
        let mut tokens: Vec<String> = name.split('_').map(str::to_string).collect();
        tokens.push("returns".into());
        tokens.push(output_kind.token().into());
        for p in params {
            tokens.push(if p.required { "requires" } else { "accepts" }.into());
            tokens.push(p.name.clone());
            tokens.push(p.declared_type.token().into());
        }
        tokens
    }
}

/// Maps the last observation of a faithful execution to the task answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFn {
    #[default]
    Identity,
}

impl AnswerFn {
    pub fn apply(self, observation: i64) -> i64 {
        match self {
            AnswerFn::Identity => observation,
        }
    }
}

/// Immutable after construction; share freely across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct ToolWorld {
    pub seed: u64,
    pub feature_dim: usize,
    pub max_depth: usize,
    pub tools: Vec<ToolSpec>,
    /// `chain_graph[u]` lists tools whose dependency param accepts `u`'s output.
    pub chain_graph: Vec<Vec<usize>>,
    pub answer_fn: AnswerFn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    UnknownTool,
    MissingParam,
    TypeMismatch,
    ConstraintViolation,
    DependencyUnmet,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::UnknownTool,
        ErrorKind::MissingParam,
        ErrorKind::TypeMismatch,
        ErrorKind::ConstraintViolation,
        ErrorKind::DependencyUnmet,
    ];
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: ArgMap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvocationResult {
    Success(i64),
    /// `param` names the offending argument when one can be singled out.
    Error { kind: ErrorKind, param: Option<String> },
}

impl InvocationResult {
    fn error(kind: ErrorKind, param: Option<&str>) -> Self {
        InvocationResult::Error {
            kind,
            param: param.map(str::to_string),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, InvocationResult::Success(_))
    }

    pub fn output(&self) -> Option<i64> {
        match self {
            InvocationResult::Success(v) => Some(*v),
            InvocationResult::Error { .. } => None,
        }
    }

    pub fn error_kind(&self) -> Option<ErrorKind> {
        match self {
            InvocationResult::Success(_) => None,
            InvocationResult::Error { kind, .. } => Some(*kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InvokeMode {
    Online,
    Exploration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub features: Vec<f64>,
    pub truth_plan: Vec<PlanStep>,
    pub answer: i64,
}

impl Task {
    pub fn truth_tools(&self) -> Vec<usize> {
        self.truth_plan.iter().map(|s| s.tool_id).collect()
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("max_depth {max_depth} exceeds what {num_tools} tools can chain")]
    DepthExceedsTools { max_depth: usize, num_tools: usize },
    #[error("invalid task request: {0}")]
    InvalidTaskRequest(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unsupported document version {0}")]
    UnsupportedVersion(u64),
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("faithful execution of tool {tool} failed: {outcome:?}")]
    Execution { tool: usize, outcome: InvocationResult },
}

/// Ground-truth invocation semantics for live (task-time) calls.
///
/// Checks run in order: unknown tool, dependency binding, missing required
/// params, declared types, hidden constraints. The first failure is reported.
pub fn invoke_tool(world: &ToolWorld, call: &ToolCall, upstream: Option<i64>) -> InvocationResult {
    world.invoke_with_mode(call, upstream, InvokeMode::Online)
}

/// Invocation as seen during offline exploration: the dependency sentinel
/// stands in for an upstream observation.
pub fn invoke_tool_exploring(world: &ToolWorld, call: &ToolCall) -> InvocationResult {
    world.invoke_with_mode(call, None, InvokeMode::Exploration)
}

impl ToolWorld {
    pub fn num_tools(&self) -> usize {
        self.tools.len()
    }

    pub fn tool_by_name(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tool_name(&self, tool_id: usize) -> &str {
        &self.tools[tool_id].name
    }

    fn invoke_with_mode(
        &self,
        call: &ToolCall,
        upstream: Option<i64>,
        mode: InvokeMode,
    ) -> InvocationResult {
        let Some(tool) = self.tool_by_name(&call.tool_name) else {
            return InvocationResult::error(ErrorKind::UnknownTool, None);
        };

        let mut consumed = None;
        if let Some(dep) = tool.dependency_param.as_deref() {
            let bound = match call.arguments.get(dep) {
                None => return InvocationResult::error(ErrorKind::DependencyUnmet, Some(dep)),
                Some(ArgValue::Int(v)) => *v,
                Some(_) => return InvocationResult::error(ErrorKind::TypeMismatch, Some(dep)),
            };
            let satisfied = match mode {
                InvokeMode::Online => upstream == Some(bound),
                InvokeMode::Exploration => bound == probe::DEPENDENCY_SENTINEL,
            };
            if !satisfied {
                return InvocationResult::error(ErrorKind::DependencyUnmet, Some(dep));
            }
            consumed = Some(bound);
        }

        let dep_name = tool.dependency_param.as_deref();
        for p in &tool.params {
            if p.required && Some(p.name.as_str()) != dep_name && !call.arguments.contains_key(&p.name) {
                return InvocationResult::error(ErrorKind::MissingParam, Some(&p.name));
            }
        }
        for p in &tool.params {
            if let Some(v) = call.arguments.get(&p.name) {
                if !p.declared_type.accepts(v) {
                    return InvocationResult::error(ErrorKind::TypeMismatch, Some(&p.name));
                }
            }
        }
        for c in &tool.hidden_constraints {
            if let Some(v) = call.arguments.get(&c.param_name) {
                if !c.rule.admits(v) {
                    return InvocationResult::error(ErrorKind::ConstraintViolation, Some(&c.param_name));
                }
            }
        }

        InvocationResult::Success(self.output_value(tool.tool_id, consumed))
    }

    /// Output of a successful call. Configuration arguments gate validity but
    /// do not change the value; only the tool and the consumed upstream do.
    fn output_value(&self, tool_id: usize, consumed: Option<i64>) -> i64 {
        let upstream_words = match consumed {
            Some(v) => [1, v as u64],
            None => [0, 0],
        };
        let h = mix(&[
            domain::OUTPUT,
            self.seed,
            tool_id as u64,
            upstream_words[0],
            upstream_words[1],
        ]);
        (h >> 11) as i64
    }

    /// Deterministic argument map that satisfies every declared and hidden
    /// constraint: the first admissible probe value per required param.
    pub fn satisfying_arguments(&self, tool_id: usize, upstream: Option<i64>) -> ArgMap {
        let tool = &self.tools[tool_id];
        let mut args = ArgMap::new();
        for p in tool.params.iter().filter(|p| p.required) {
            if tool.dependency_param.as_deref() == Some(p.name.as_str()) {
                args.insert(
                    p.name.clone(),
                    ArgValue::Int(upstream.unwrap_or(probe::DEPENDENCY_SENTINEL)),
                );
                continue;
            }
            let value = probe::pool_for(p.declared_type)
                .into_iter()
                .find(|v| {
                    tool.hidden_constraints
                        .iter()
                        .filter(|c| c.param_name == p.name)
                        .all(|c| c.rule.admits(v))
                })
                .expect("validated worlds admit at least one probe value per constrained param");
            args.insert(p.name.clone(), value);
        }
        args
    }

    /// Runs a tool chain with satisfying arguments, threading each output into
    /// the next call. Returns the answer derived from the final observation.
    pub fn execute_faithfully(&self, tools: &[usize]) -> Result<i64, WorldError> {
        let mut upstream = None;
        for &tool in tools {
            let call = ToolCall {
                tool_name: self.tools[tool].name.clone(),
                arguments: self.satisfying_arguments(tool, upstream),
            };
            match invoke_tool(self, &call, upstream) {
                InvocationResult::Success(v) => upstream = Some(v),
                outcome => return Err(WorldError::Execution { tool, outcome }),
            }
        }
        upstream
            .map(|v| self.answer_fn.apply(v))
            .ok_or_else(|| WorldError::InvalidTaskRequest("empty tool chain".into()))
    }

    /// Number of tools on the longest path of the chain graph.
    pub fn longest_chain(&self) -> usize {
        let order = match topological_order(&self.chain_graph) {
            Some(o) => o,
            None => return 0,
        };
        let mut best = vec![1usize; self.chain_graph.len()];
        for &u in order.iter().rev() {
            for &v in &self.chain_graph[u] {
                best[u] = best[u].max(best[v] + 1);
            }
        }
        best.into_iter().max().unwrap_or(0)
    }

    pub fn has_in_edges(&self) -> Vec<bool> {
        let mut incoming = vec![false; self.chain_graph.len()];
        for succ in &self.chain_graph {
            for &v in succ {
                incoming[v] = true;
            }
        }
        incoming
    }

    /// Whether `tools` is a directed path in the chain graph.
    pub fn is_chain_path(&self, tools: &[usize]) -> bool {
        tools.iter().all(|&t| t < self.num_tools())
            && tools.windows(2).all(|w| self.chain_graph[w[0]].contains(&w[1]))
    }
}

/// Kahn's algorithm; `None` when the graph has a cycle or dangling edges.
pub(crate) fn topological_order(graph: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = graph.len();
    let mut indegree = vec![0usize; n];
    for succ in graph {
        for &v in succ {
            if v >= n {
                return None;
            }
            indegree[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &v in &graph[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(v);
            }
        }
    }
    (order.len() == n).then_some(order)
}
