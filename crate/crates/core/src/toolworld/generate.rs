use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::probe::{INT_PROBES, TOKEN_POOL};
use super::{
    AnswerFn, ConstraintRule, DeclaredType, HiddenConstraint, OutputKind, ParamSchema, Task,
    ToolSpec, ToolWorld, WorldError,
};
use crate::plan::PlanStep;
use crate::seeding::{domain, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_tools: usize,
    pub feature_dim: usize,
    pub max_depth: usize,
    pub hidden_constraint_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_tools: 20,
            feature_dim: 32,
            max_depth: 5,
            hidden_constraint_rate: 0.5,
        }
    }
}

const VERBS: [&str; 10] = [
    "fetch", "lookup", "resolve", "convert", "tally", "rank", "score", "locate", "derive", "map",
];
const NOUNS: [&str; 10] = [
    "city", "author", "film", "river", "company", "element", "planet", "album", "species", "language",
];
const CONFIG_PARAMS: [(&str, DeclaredType); 8] = [
    ("count", DeclaredType::Integer),
    ("limit", DeclaredType::Integer),
    ("precision", DeclaredType::Integer),
    ("scale", DeclaredType::Real),
    ("label", DeclaredType::String),
    ("format", DeclaredType::String),
    ("unit", DeclaredType::EnumHintAbsent),
    ("mode", DeclaredType::EnumHintAbsent),
];
const FORMAT_PATTERNS: [&str; 5] = ["??", "???", "??*", "*e*", "*s*"];
/// Hidden payloads keep at least this share of the probe pool admissible.
const MIN_PROBE_DENSITY: f64 = 0.2;
const DEPENDENCY_PARAM: &str = "input";

/// Builds a deterministic tool world.
///
/// Tools are laid out in a seeded topological order. The first quarter are
/// sources (no upstream input); every later tool consumes the output of at
/// least one earlier tool. A backbone from the first source through every
/// consumer guarantees a chain of `num_tools - sources + 1 >= max_depth` tools.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<ToolWorld, WorldError> {
    let WorldConfig {
        num_tools: n,
        feature_dim,
        max_depth,
        hidden_constraint_rate: rate,
    } = *config;
    if n < 4 {
        if max_depth > n {
            return Err(WorldError::DepthExceedsTools {
                max_depth,
                num_tools: n,
            });
        }
        return Err(WorldError::InvalidConfig(format!("num_tools must be >= 4, got {n}")));
    }
    if max_depth < 2 {
        return Err(WorldError::InvalidConfig(format!("max_depth must be >= 2, got {max_depth}")));
    }
    if max_depth > n {
        return Err(WorldError::DepthExceedsTools {
            max_depth,
            num_tools: n,
        });
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(WorldError::InvalidConfig(format!(
            "hidden_constraint_rate must lie in [0, 1], got {rate}"
        )));
    }
    if feature_dim == 0 {
        return Err(WorldError::InvalidConfig("feature_dim must be >= 1".into()));
    }

    let mut rng = stream(&[domain::WORLD, seed]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let num_sources = (n / 4).clamp(1, n - max_depth + 1);

    let mut graph = vec![Vec::new(); n];
    for pos in num_sources..n {
        let backbone = if pos == num_sources { 0 } else { pos - 1 };
        graph[order[backbone]].push(order[pos]);
        let extra_rate = (1.5 / pos as f64).min(1.0);
        for earlier in 0..pos {
            if earlier != backbone && rng.random_bool(extra_rate) {
                graph[order[earlier]].push(order[pos]);
            }
        }
    }
    for &src in &order[..num_sources] {
        if graph[src].is_empty() {
            let target = *order[num_sources..].choose(&mut rng).expect("at least one consumer");
            graph[src].push(target);
        }
    }
    for succ in &mut graph {
        succ.sort_unstable();
    }

    let num_constrained = (rate * n as f64).round() as usize;
    let mut constrained_ids: Vec<usize> = (0..n).collect();
    constrained_ids.shuffle(&mut rng);
    let mut constrained = vec![false; n];
    for &id in &constrained_ids[..num_constrained] {
        constrained[id] = true;
    }

    let mut is_consumer = vec![false; n];
    for &id in &order[num_sources..] {
        is_consumer[id] = true;
    }

    let tools = (0..n)
        .map(|id| build_tool(id, is_consumer[id], constrained[id], &mut rng))
        .collect();

    let world = ToolWorld {
        seed,
        feature_dim,
        max_depth,
        tools,
        chain_graph: graph,
        answer_fn: AnswerFn::Identity,
    };
    world.validate()?;
    Ok(world)
}

fn build_tool(id: usize, consumer: bool, constrained: bool, rng: &mut ChaCha8Rng) -> ToolSpec {
    let name = format!(
        "{}_{}{id:02}",
        VERBS.choose(rng).expect("non-empty"),
        NOUNS.choose(rng).expect("non-empty")
    );

    let mut params = Vec::new();
    if consumer {
        params.push(ParamSchema {
            name: DEPENDENCY_PARAM.into(),
            declared_type: DeclaredType::Integer,
            required: true,
        });
    }
    let num_config = rng.random_range(1..=2);
    for &(pname, declared) in CONFIG_PARAMS.choose_multiple(rng, num_config) {
        params.push(ParamSchema {
            name: pname.into(),
            declared_type: declared,
            required: true,
        });
    }
    if rng.random_bool(0.3) {
        params.push(ParamSchema {
            name: "note".into(),
            declared_type: DeclaredType::String,
            required: false,
        });
    }

    let mut hidden_constraints = Vec::new();
    if constrained {
        let mut candidates: Vec<usize> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.required && p.name != DEPENDENCY_PARAM && p.declared_type != DeclaredType::Real
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            params.push(ParamSchema {
                name: "unit".into(),
                declared_type: DeclaredType::EnumHintAbsent,
                required: true,
            });
            candidates.push(params.len() - 1);
        }
        let target = &params[*candidates.choose(rng).expect("non-empty")];
        hidden_constraints.push(HiddenConstraint {
            param_name: target.name.clone(),
            rule: hidden_rule(target.declared_type, rng),
        });
    }

    let output_kind = *OutputKind::ALL.choose(rng).expect("non-empty");
    ToolSpec {
        tool_id: id,
        description: ToolSpec::describe(&name, &params, output_kind),
        name,
        params,
        hidden_constraints,
        output_kind,
        dependency_param: consumer.then(|| DEPENDENCY_PARAM.to_string()),
    }
}

fn hidden_rule(declared: DeclaredType, rng: &mut ChaCha8Rng) -> ConstraintRule {
    match declared {
        DeclaredType::Integer => {
            let mut sorted = INT_PROBES;
            sorted.sort_unstable();
            let width = rng.random_range(2..=3);
            let start = rng.random_range(0..=sorted.len() - width);
            ConstraintRule::IntegerRange {
                min: sorted[start],
                max: sorted[start + width - 1],
            }
        }
        DeclaredType::String if rng.random_bool(0.5) => {
            let viable: Vec<&str> = FORMAT_PATTERNS
                .iter()
                .copied()
                .filter(|p| {
                    ConstraintRule::StringFormat((*p).into()).probe_density(declared) >= MIN_PROBE_DENSITY
                })
                .collect();
            ConstraintRule::StringFormat((*viable.choose(rng).expect("viable pattern")).into())
        }
        DeclaredType::String | DeclaredType::EnumHintAbsent => {
            let size = rng.random_range(4..=8);
            let mut picked: Vec<usize> = (0..TOKEN_POOL.len()).collect();
            picked.shuffle(rng);
            let mut picked = picked[..size].to_vec();
            picked.sort_unstable();
            ConstraintRule::EnumMembership(picked.into_iter().map(|i| TOKEN_POOL[i].to_string()).collect())
        }
        DeclaredType::Real => unreachable!("reals never carry hidden constraints"),
    }
}

impl ToolWorld {
    /// Query-space directions of every tool: seeded Gaussian vectors scaled to
    /// unit expected norm, orthonormalized (Gram-Schmidt) when there are no
    /// more tools than feature dimensions.
    pub fn tool_embeddings(&self) -> Vec<Vec<f64>> {
        let scale = 1.0 / (self.feature_dim as f64).sqrt();
        let raw: Vec<Vec<f64>> = (0..self.num_tools())
            .map(|t| {
                let mut rng = stream(&[domain::EMBED, self.seed, t as u64]);
                (0..self.feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect()
            })
            .collect();
        if self.num_tools() > self.feature_dim {
            return raw;
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
        for mut v in raw {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
        basis
    }

    pub fn tool_embedding(&self, tool_id: usize) -> Vec<f64> {
        self.tool_embeddings().swap_remove(tool_id)
    }

    /// Noise-free query features of a tool chain: the sum of its tools' embeddings.
    pub fn chain_features(&self, tools: &[usize]) -> Vec<f64> {
        let embeddings = self.tool_embeddings();
        let mut features = vec![0.0; self.feature_dim];
        for &t in tools {
            for (f, e) in features.iter_mut().zip(&embeddings[t]) {
                *f += e;
            }
        }
        features
    }
}

/// Generates `count` multi-hop tasks whose truth plans are chain-graph paths
/// starting at a source tool. Lengths are uniform over `depth_range`; paths of
/// a given length are uniform over all such paths.
pub fn generate_tasks(
    world: &ToolWorld,
    count: usize,
    depth_range: (usize, usize),
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<Task>, WorldError> {
    let (min_depth, max_depth) = depth_range;
    if count == 0 {
        return Err(WorldError::InvalidTaskRequest("count must be positive".into()));
    }
    if min_depth < 2 || min_depth > max_depth || max_depth > world.max_depth {
        return Err(WorldError::InvalidTaskRequest(format!(
            "depth range [{min_depth}, {max_depth}] must satisfy 2 <= min <= max <= {}",
            world.max_depth
        )));
    }
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(WorldError::InvalidTaskRequest(format!(
            "noise_scale must be finite and non-negative, got {noise_scale}"
        )));
    }

    let n = world.num_tools();
    // ways[len][v]: number of chain-graph paths with exactly `len` tools starting at v.
    let mut ways = vec![vec![0.0f64; n]; max_depth + 1];
    ways[1].fill(1.0);
    for len in 2..=max_depth {
        for v in 0..n {
            ways[len][v] = world.chain_graph[v].iter().map(|&w| ways[len - 1][w]).sum();
        }
    }
    let incoming = world.has_in_edges();
    let sources: Vec<usize> = (0..n).filter(|&v| !incoming[v]).collect();
    for len in min_depth..=max_depth {
        if sources.iter().all(|&s| ways[len][s] == 0.0) {
            return Err(WorldError::InvalidTaskRequest(format!("world has no chain of length {len}")));
        }
    }

    let embeddings = world.tool_embeddings();
    let noise = (noise_scale > 0.0)
        .then(|| Normal::new(0.0, noise_scale).expect("finite positive std"));
    let mut rng = stream(&[domain::TASKS, world.seed, seed]);

    let mut tasks = Vec::with_capacity(count);
    for task_id in 0..count {
        let m = rng.random_range(min_depth..=max_depth);
        let mut path = Vec::with_capacity(m);
        let mut current = pick_weighted(&sources, |s| ways[m][s], &mut rng);
        path.push(current);
        for remaining in (1..m).rev() {
            current = pick_weighted(&world.chain_graph[current], |w| ways[remaining][w], &mut rng);
            path.push(current);
        }

        let mut features = vec![0.0; world.feature_dim];
        for &t in &path {
            for (f, e) in features.iter_mut().zip(&embeddings[t]) {
                *f += e;
            }
        }
        if let Some(noise) = &noise {
            for f in &mut features {
                *f += noise.sample(&mut rng);
            }
        }

        let truth_plan = path
            .iter()
            .enumerate()
            .map(|(i, &t)| PlanStep::templated(i + 1, t, world.tool_name(t)))
            .collect();
        let answer = world.execute_faithfully(&path)?;
        tasks.push(Task {
            task_id,
            features,
            truth_plan,
            answer,
        });
    }
    Ok(tasks)
}

fn pick_weighted(items: &[usize], weight: impl Fn(usize) -> f64, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = items.iter().map(|&i| weight(i)).sum();
    let mut target = rng.random::<f64>() * total;
    let mut last_viable = None;
    for &i in items {
        let w = weight(i);
        if w <= 0.0 {
            continue;
        }
        last_viable = Some(i);
        if target < w {
            return i;
        }
        target -= w;
    }
    last_viable.expect("caller guarantees a positive total weight")
}
