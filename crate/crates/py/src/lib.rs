//! Python bindings for `toolplan_core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use toolplan_core::explorer::{
    build_knowledge_base, load_knowledge_base, save_knowledge_base, ExploreConfig, KnowledgeBase,
};
use toolplan_core::grpo::{normalize_advantages as normalize, train as train_planner, TrainConfig};
use toolplan_core::harness::{default_shape, evaluate as evaluate_planner};
use toolplan_core::planner::{greedy_plan, load_checkpoint, save_checkpoint, PlannerParams};
use toolplan_core::reward::{plan_reward as dense_reward, sparse_reward as exact_reward, RewardKind};
use toolplan_core::toolworld::{
    generate_tasks, generate_world, invoke_tool, load_world, save_world, ArgMap, InvocationResult,
    Task, ToolCall, ToolWorld, WorldConfig,
};
use toolplan_core::{Plan, PlanStep};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "World", frozen)]
struct PyWorld {
    inner: ToolWorld,
}

#[pymethods]
impl PyWorld {
    #[staticmethod]
    #[pyo3(signature = (num_tools=20, feature_dim=32, max_depth=5, hidden_rate=0.5, seed=0))]
    fn generate(num_tools: usize, feature_dim: usize, max_depth: usize, hidden_rate: f64, seed: u64) -> PyResult<Self> {
        let cfg = WorldConfig {
            num_tools,
            feature_dim,
            max_depth,
            hidden_constraint_rate: hidden_rate,
        };
        Ok(Self {
            inner: generate_world(&cfg, seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_world(document).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        save_world(&self.inner)
    }

    #[getter]
    fn num_tools(&self) -> usize {
        self.inner.num_tools()
    }

    #[getter]
    fn max_depth(&self) -> usize {
        self.inner.max_depth
    }

    fn tool_names(&self) -> Vec<String> {
        self.inner.tools.iter().map(|t| t.name.clone()).collect()
    }

    /// Returns `(output, None)` on success or `(None, error_kind)`.
    /// `arguments` is a JSON object.
    #[pyo3(signature = (tool_name, arguments, upstream=None))]
    fn invoke(&self, tool_name: &str, arguments: &str, upstream: Option<i64>) -> PyResult<(Option<i64>, Option<String>)> {
        let arguments: ArgMap = serde_json::from_str(arguments).map_err(value_err)?;
        let call = ToolCall {
            tool_name: tool_name.to_string(),
            arguments,
        };
        Ok(match invoke_tool(&self.inner, &call, upstream) {
            InvocationResult::Success(v) => (Some(v), None),
            InvocationResult::Error { kind, .. } => (None, Some(kind.to_string())),
        })
    }

    #[pyo3(signature = (count, depth_min=2, depth_max=5, noise=0.1, seed=0))]
    fn generate_tasks(&self, count: usize, depth_min: usize, depth_max: usize, noise: f64, seed: u64) -> PyResult<Vec<PyTask>> {
        let tasks = generate_tasks(&self.inner, count, (depth_min, depth_max), noise, seed).map_err(value_err)?;
        Ok(tasks.into_iter().map(|inner| PyTask { inner }).collect())
    }
}

#[pyclass(name = "Task", frozen)]
struct PyTask {
    inner: Task,
}

#[pymethods]
impl PyTask {
    #[getter]
    fn task_id(&self) -> usize {
        self.inner.task_id
    }

    #[getter]
    fn features(&self) -> Vec<f64> {
        self.inner.features.clone()
    }

    #[getter]
    fn truth_tools(&self) -> Vec<usize> {
        self.inner.truth_tools()
    }

    #[getter]
    fn answer(&self) -> i64 {
        self.inner.answer
    }
}

#[pyclass(name = "KnowledgeBase", frozen)]
struct PyKnowledgeBase {
    inner: KnowledgeBase,
}

#[pymethods]
impl PyKnowledgeBase {
    #[staticmethod]
    #[pyo3(signature = (world, max_rounds=10, seed=0))]
    fn build(world: &PyWorld, max_rounds: usize, seed: u64) -> PyResult<Self> {
        let kb = build_knowledge_base(&world.inner, &ExploreConfig::with_rounds(max_rounds), seed).map_err(value_err)?;
        Ok(Self { inner: kb })
    }

    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_knowledge_base(document).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        save_knowledge_base(&self.inner)
    }

    /// Validated templates of one tool, each as a JSON object string.
    fn templates(&self, tool_id: usize) -> Vec<String> {
        self.inner
            .entry(tool_id)
            .map(|e| {
                e.validated_templates
                    .iter()
                    .map(|t| serde_json::to_string(t).expect("templates serialize"))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[pyclass(name = "Planner", frozen)]
struct PyPlanner {
    inner: PlannerParams,
}

#[pymethods]
impl PyPlanner {
    #[staticmethod]
    #[pyo3(signature = (world, seed=0))]
    fn init(world: &PyWorld, seed: u64) -> Self {
        Self {
            inner: PlannerParams::init_gaussian(default_shape(&world.inner), seed),
        }
    }

    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(document).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        save_checkpoint(&self.inner)
    }

    fn greedy_plan(&self, world: &PyWorld, task: &PyTask) -> PyResult<Vec<usize>> {
        Ok(greedy_plan(&self.inner, &world.inner, &task.inner)
            .map_err(value_err)?
            .tool_ids())
    }
}

fn unwrap_tasks(tasks: &[PyRef<'_, PyTask>]) -> Vec<Task> {
    tasks.iter().map(|t| t.inner.clone()).collect()
}

/// Trains from `planner` and returns `(trained_planner, training_log_csv)`.
#[pyfunction]
#[pyo3(signature = (world, tasks, planner, reward="dense", epochs=15, seed=0, probe=None))]
fn train(
    py: Python<'_>,
    world: &PyWorld,
    tasks: Vec<PyRef<'_, PyTask>>,
    planner: &PyPlanner,
    reward: &str,
    epochs: usize,
    seed: u64,
    probe: Option<Vec<PyRef<'_, PyTask>>>,
) -> PyResult<(PyPlanner, String)> {
    let reward: RewardKind = reward.parse().map_err(PyValueError::new_err)?;
    let tasks = unwrap_tasks(&tasks);
    let probe = probe.map(|p| unwrap_tasks(&p)).unwrap_or_default();
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (params, log) = py
        .detach(|| train_planner(&world.inner, &tasks, &probe, &planner.inner, reward, &config))
        .map_err(value_err)?;
    Ok((PyPlanner { inner: params }, log.to_csv()))
}

/// Greedy-plans and executes every task; returns the metrics as a dict.
#[pyfunction]
#[pyo3(signature = (world, tasks, planner, kb=None, retry_budget=2))]
fn evaluate<'py>(
    py: Python<'py>,
    world: &PyWorld,
    tasks: Vec<PyRef<'py, PyTask>>,
    planner: &PyPlanner,
    kb: Option<&PyKnowledgeBase>,
    retry_budget: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let tasks = unwrap_tasks(&tasks);
    let m = evaluate_planner(&world.inner, &tasks, &planner.inner, kb.map(|k| &k.inner), retry_budget)
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("success_rate", m.success_rate)?;
    d.set_item("invocation_error_rate", m.invocation_error_rate)?;
    d.set_item("plan_exact_match_rate", m.plan_exact_match_rate)?;
    d.set_item("tasks_total", m.tasks_total)?;
    d.set_item("tasks_succeeded", m.tasks_succeeded)?;
    d.set_item("calls_attempted", m.calls_attempted)?;
    d.set_item("calls_errored", m.calls_errored)?;
    Ok(d)
}

fn steps(tools: &[usize]) -> Vec<PlanStep> {
    tools
        .iter()
        .map(|&t| PlanStep {
            sub_query: Vec::new(),
            tool_id: t,
        })
        .collect()
}

/// Dense step-wise reward of a tool sequence against the truth sequence.
#[pyfunction]
fn plan_reward(plan: Vec<usize>, truth: Vec<usize>) -> f64 {
    dense_reward(&Plan { steps: steps(&plan) }, &steps(&truth)).total
}

#[pyfunction]
fn sparse_reward(plan: Vec<usize>, truth: Vec<usize>) -> f64 {
    exact_reward(&Plan { steps: steps(&plan) }, &steps(&truth))
}

#[pyfunction]
#[pyo3(signature = (rewards, eta=1e-8))]
fn normalize_advantages(rewards: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
    if rewards.len() < 2 || !(eta > 0.0) {
        return Err(PyValueError::new_err("need at least two rewards and eta > 0"));
    }
    Ok(normalize(&rewards, eta).0)
}

#[pymodule]
fn toolplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorld>()?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyKnowledgeBase>()?;
    m.add_class::<PyPlanner>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_reward, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_reward, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_advantages, m)?)?;
    Ok(())
}
