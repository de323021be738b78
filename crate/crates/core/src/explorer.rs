//! Offline trial-and-error exploration of each tool.
//!
//! Every tool is probed in isolation with declared-type-conforming arguments
//! drawn from bounded probe pools. Failures are recorded and steer later
//! proposals: a value blamed for a constraint violation on a param is never
//! proposed for that param again, and the blamed param is varied first. The
//! result is a knowledge base of validated invocation templates per tool.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical_json::to_canonical_string;
use crate::seeding::{domain, stream};
use crate::toolworld::probe::{pool_for, DEPENDENCY_SENTINEL};
use crate::toolworld::{
    invoke_tool_exploring, ArgMap, ArgValue, ErrorKind, InvocationResult, ParamSchema, ToolCall,
    ToolWorld,
};

pub const KB_FORMAT_VERSION: u64 = 1;
/// Random redraws attempted before falling back to exhaustive enumeration.
const RANDOM_REDRAWS: usize = 64;
const ENUMERATION_CAP: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("max_rounds must be at least 1")]
    ZeroBudget,
    #[error("tool id {0} not in world")]
    UnknownTool(usize),
    #[error("probe space exhausted{}", .param.as_ref().map(|p| format!(" for param `{p}`")).unwrap_or_default())]
    Exhausted { param: Option<String> },
    #[error("unsupported knowledge base version {0}")]
    UnsupportedVersion(u64),
    #[error("malformed knowledge base: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub arguments: ArgMap,
    pub kind: ErrorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeEntry {
    pub tool_id: usize,
    pub validated_templates: Vec<ArgMap>,
    pub failures: Vec<FailureRecord>,
    pub rounds_used: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    pub world_seed: u64,
    pub entries: BTreeMap<usize, KnowledgeEntry>,
}

impl KnowledgeBase {
    pub fn entry(&self, tool_id: usize) -> Option<&KnowledgeEntry> {
        self.entries.get(&tool_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub max_rounds: usize,
    pub stop_on_first_success: bool,
    pub max_templates: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            stop_on_first_success: false,
            max_templates: 3,
        }
    }
}

impl ExploreConfig {
    pub fn with_rounds(max_rounds: usize) -> Self {
        Self {
            max_rounds,
            ..Self::default()
        }
    }
}

fn blames_value(kind: ErrorKind) -> bool {
    matches!(kind, ErrorKind::ConstraintViolation | ErrorKind::TypeMismatch)
}

/// Proposes a candidate argument map for the required params of a tool.
///
/// Never returns a map that appears in `prior_failures`. Dependency params
/// are bound to the exploration sentinel.
pub fn propose_arguments<R: Rng + ?Sized>(
    params: &[ParamSchema],
    dependency_param: Option<&str>,
    prior_failures: &[FailureRecord],
    rng: &mut R,
) -> Result<ArgMap, ExploreError> {
    propose_avoiding(params, dependency_param, prior_failures, &[], rng)
}

/// As [`propose_arguments`], additionally avoiding every map in `avoid`.
pub fn propose_avoiding<R: Rng + ?Sized>(
    params: &[ParamSchema],
    dependency_param: Option<&str>,
    prior_failures: &[FailureRecord],
    avoid: &[ArgMap],
    rng: &mut R,
) -> Result<ArgMap, ExploreError> {
    let mut candidates: Vec<(&str, Vec<ArgValue>)> = Vec::new();
    for p in params.iter().filter(|p| p.required) {
        if Some(p.name.as_str()) == dependency_param {
            candidates.push((&p.name, vec![ArgValue::Int(DEPENDENCY_SENTINEL)]));
            continue;
        }
        let known_bad: Vec<&ArgValue> = prior_failures
            .iter()
            .filter(|f| blames_value(f.kind) && f.param.as_deref() == Some(p.name.as_str()))
            .filter_map(|f| f.arguments.get(&p.name))
            .collect();
        let pool: Vec<ArgValue> = pool_for(p.declared_type)
            .into_iter()
            .filter(|v| !known_bad.contains(&v))
            .collect();
        if pool.is_empty() {
            return Err(ExploreError::Exhausted {
                param: Some(p.name.clone()),
            });
        }
        candidates.push((&p.name, pool));
    }

    let seen = |m: &ArgMap| prior_failures.iter().any(|f| &f.arguments == m) || avoid.contains(m);

    let last = prior_failures.last();
    let blamed = last
        .filter(|f| blames_value(f.kind))
        .and_then(|f| f.param.as_deref());
    let mut proposal = ArgMap::new();
    for (name, pool) in &candidates {
        let kept = last
            .and_then(|f| f.arguments.get(*name))
            .filter(|v| blamed != Some(*name) && pool.contains(v));
        let value = match kept {
            Some(v) => v.clone(),
            None => pool.choose(rng).expect("non-empty pool").clone(),
        };
        proposal.insert((*name).to_string(), value);
    }
    if !seen(&proposal) {
        return Ok(proposal);
    }

    for _ in 0..RANDOM_REDRAWS {
        let draw: ArgMap = candidates
            .iter()
            .map(|(n, pool)| ((*n).to_string(), pool.choose(rng).expect("non-empty").clone()))
            .collect();
        if !seen(&draw) {
            return Ok(draw);
        }
    }

    // Odometer over the remaining candidate space.
    let mut idx = vec![0usize; candidates.len()];
    for _ in 0..ENUMERATION_CAP {
        let draw: ArgMap = candidates
            .iter()
            .zip(&idx)
            .map(|((n, pool), &i)| ((*n).to_string(), pool[i].clone()))
            .collect();
        if !seen(&draw) {
            return Ok(draw);
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return Err(ExploreError::Exhausted { param: None });
            }
            idx[pos] += 1;
            if idx[pos] < candidates[pos].1.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
    Err(ExploreError::Exhausted { param: None })
}

/// Probes one tool for up to `config.max_rounds` invocations.
pub fn explore_tool<R: Rng + ?Sized>(
    world: &ToolWorld,
    tool_id: usize,
    config: &ExploreConfig,
    rng: &mut R,
) -> Result<KnowledgeEntry, ExploreError> {
    if config.max_rounds == 0 {
        return Err(ExploreError::ZeroBudget);
    }
    let tool = world.tools.get(tool_id).ok_or(ExploreError::UnknownTool(tool_id))?;
    let mut entry = KnowledgeEntry {
        tool_id,
        validated_templates: Vec::new(),
        failures: Vec::new(),
        rounds_used: 0,
    };
    while entry.rounds_used < config.max_rounds {
        let arguments = match propose_avoiding(
            &tool.params,
            tool.dependency_param.as_deref(),
            &entry.failures,
            &entry.validated_templates,
            rng,
        ) {
            Ok(args) => args,
            Err(ExploreError::Exhausted { .. }) => break,
            Err(e) => return Err(e),
        };
        entry.rounds_used += 1;
        let call = ToolCall {
            tool_name: tool.name.clone(),
            arguments,
        };
        match invoke_tool_exploring(world, &call) {
            InvocationResult::Success(_) => {
                entry.validated_templates.push(call.arguments);
                if config.stop_on_first_success || entry.validated_templates.len() >= config.max_templates {
                    break;
                }
            }
            InvocationResult::Error { kind, param } => entry.failures.push(FailureRecord {
                arguments: call.arguments,
                kind,
                param,
            }),
        }
    }
    Ok(entry)
}

/// Explores every tool with its own rng stream keyed by `(seed, tool_id)`,
/// so the result does not depend on exploration order.
pub fn build_knowledge_base(
    world: &ToolWorld,
    config: &ExploreConfig,
    seed: u64,
) -> Result<KnowledgeBase, ExploreError> {
    let mut entries = BTreeMap::new();
    for tool in &world.tools {
        let mut rng = stream(&[domain::EXPLORE, seed, tool.tool_id as u64]);
        entries.insert(tool.tool_id, explore_tool(world, tool.tool_id, config, &mut rng)?);
    }
    Ok(KnowledgeBase {
        world_seed: world.seed,
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct EntryDocument {
    validated_templates: Vec<ArgMap>,
    failures: Vec<FailureRecord>,
    rounds_used: usize,
}

#[derive(Serialize, Deserialize)]
struct KnowledgeDocument {
    version: u64,
    world_seed: u64,
    entries: BTreeMap<String, EntryDocument>,
}

pub fn save_knowledge_base(kb: &KnowledgeBase) -> String {
    let doc = KnowledgeDocument {
        version: KB_FORMAT_VERSION,
        world_seed: kb.world_seed,
        entries: kb
            .entries
            .iter()
            .map(|(id, e)| {
                (
                    id.to_string(),
                    EntryDocument {
                        validated_templates: e.validated_templates.clone(),
                        failures: e.failures.clone(),
                        rounds_used: e.rounds_used,
                    },
                )
            })
            .collect(),
    };
    to_canonical_string(&doc).expect("probe values are finite")
}

pub fn load_knowledge_base(document: &str) -> Result<KnowledgeBase, ExploreError> {
    let doc: KnowledgeDocument =
        serde_json::from_str(document).map_err(|e| ExploreError::Parse(e.to_string()))?;
    if doc.version != KB_FORMAT_VERSION {
        return Err(ExploreError::UnsupportedVersion(doc.version));
    }
    let mut entries = BTreeMap::new();
    for (key, e) in doc.entries {
        let tool_id: usize = key
            .parse()
            .map_err(|_| ExploreError::Parse(format!("entry key `{key}` is not a tool id")))?;
        entries.insert(
            tool_id,
            KnowledgeEntry {
                tool_id,
                validated_templates: e.validated_templates,
                failures: e.failures,
                rounds_used: e.rounds_used,
            },
        );
    }
    Ok(KnowledgeBase {
        world_seed: doc.world_seed,
        entries,
    })
}
