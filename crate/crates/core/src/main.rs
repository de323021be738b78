use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use toolplan_core::canonical_json::to_canonical_string;
use toolplan_core::executor::execute_plan;
use toolplan_core::explorer::{build_knowledge_base, load_knowledge_base, save_knowledge_base, ExploreConfig};
use toolplan_core::grpo::{train, TrainConfig};
use toolplan_core::harness::{
    default_shape, evaluate_plans, run_ablation, split_tasks, AblationConfig, AblationVariant,
};
use toolplan_core::planner::{load_checkpoint, save_checkpoint, PlannerParams};
use toolplan_core::reward::RewardKind;
use toolplan_core::toolworld::{generate_tasks, generate_world, load_world, save_world, Task, ToolWorld, WorldConfig, WorldDocument};

#[derive(Parser)]
#[command(name = "toolplan", version, about = "Simulated multi-hop tool use with a GRPO-trained planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tool world.
    GenWorld {
        #[arg(long, default_value_t = 20)]
        tools: usize,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 5)]
        max_depth: usize,
        #[arg(long, default_value_t = 0.5)]
        hidden_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate multi-hop tasks for a world.
    GenTasks {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        depth_min: usize,
        #[arg(long, default_value_t = 5)]
        depth_max: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explore every tool offline and write the knowledge base.
    Explore {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the planner on the 80% split of a task file.
    Train {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value = "dense")]
        reward: RewardKind,
        #[command(flatten)]
        hyper: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a planner checkpoint.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        planner: PathBuf,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        retry_budget: usize,
        /// Evaluate only the 20% split held out by `train --seed <S>`.
        #[arg(long)]
        holdout_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        export_plans: Option<PathBuf>,
        /// Write one line per invocation.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one of the two ablations.
    Ablate {
        #[arg(long)]
        which: AblationVariant,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[command(flatten)]
        hyper: TrainArgs,
        #[arg(long, default_value_t = 10)]
        max_rounds: usize,
        #[arg(long, default_value_t = 0)]
        explore_seed: u64,
        #[arg(long, default_value_t = 2)]
        retry_budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    clip_eps: f64,
    #[arg(long, default_value_t = 1e-8)]
    eta: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_tasks)]
    batch_tasks: usize,
    #[arg(long, default_value_t = TrainConfig::default().inner_updates)]
    inner_updates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            epochs: self.epochs,
            learning_rate: self.lr,
            clip_eps: self.clip_eps,
            eta: self.eta,
            batch_tasks: self.batch_tasks,
            inner_updates: self.inner_updates,
            seed: self.seed,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_world(path: &Path) -> Result<ToolWorld> {
    load_world(&read(path)?).with_context(|| format!("loading world {}", path.display()))
}

/// Loads a task file and checks it was generated for `world`.
fn read_tasks(path: &Path, world: &ToolWorld) -> Result<Vec<Task>> {
    let (task_world, tasks) =
        WorldDocument::parse(&read(path)?).with_context(|| format!("loading tasks {}", path.display()))?;
    if save_world(&task_world) != save_world(world) {
        bail!("{} was generated for a different world", path.display());
    }
    match tasks {
        Some(t) if !t.is_empty() => Ok(t),
        _ => bail!("{} contains no tasks", path.display()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenWorld {
            tools,
            feature_dim,
            max_depth,
            hidden_rate,
            seed,
            out,
        } => {
            let cfg = WorldConfig {
                num_tools: tools,
                feature_dim,
                max_depth,
                hidden_constraint_rate: hidden_rate,
            };
            write(&out, &save_world(&generate_world(&cfg, seed)?))
        }
        Command::GenTasks {
            world,
            count,
            depth_min,
            depth_max,
            noise,
            seed,
            out,
        } => {
            let w = read_world(&world)?;
            let tasks = generate_tasks(&w, count, (depth_min, depth_max), noise, seed)?;
            write(&out, &WorldDocument::new(&w, Some(&tasks)).to_json())
        }
        Command::Explore {
            world,
            max_rounds,
            seed,
            out,
        } => {
            let w = read_world(&world)?;
            let kb = build_knowledge_base(&w, &ExploreConfig::with_rounds(max_rounds), seed)?;
            write(&out, &save_knowledge_base(&kb))
        }
        Command::Train {
            world,
            tasks,
            reward,
            hyper,
            out,
            log,
        } => {
            let w = read_world(&world)?;
            let all = read_tasks(&tasks, &w)?;
            let (train_set, holdout) = split_tasks(&all, hyper.seed)?;
            let initial = PlannerParams::init_gaussian(default_shape(&w), hyper.seed);
            let (params, training_log) = train(&w, &train_set, &holdout, &initial, reward, &hyper.config())?;
            write(&out, &save_checkpoint(&params))?;
            if let Some(log) = log {
                write(&log, &training_log.to_csv())?;
            }
            Ok(())
        }
        Command::Eval {
            world,
            tasks,
            planner,
            kb,
            retry_budget,
            holdout_seed,
            out,
            export_plans,
            trace,
        } => {
            let w = read_world(&world)?;
            let mut all = read_tasks(&tasks, &w)?;
            if let Some(seed) = holdout_seed {
                all = split_tasks(&all, seed)?.1;
            }
            let params = load_checkpoint(&read(&planner)?).context("loading planner")?;
            if params.shape().num_tools != w.num_tools() || params.shape().feature_dim != w.feature_dim {
                bail!("planner shape does not match the world");
            }
            let kb = match kb {
                Some(p) => {
                    let kb = load_knowledge_base(&read(&p)?).context("loading knowledge base")?;
                    if kb.world_seed != w.seed {
                        bail!("knowledge base was built for world seed {}", kb.world_seed);
                    }
                    Some(kb)
                }
                None => None,
            };
            let (metrics, plans) = evaluate_plans(&w, &all, &params, kb.as_ref(), retry_budget)?;
            write(&out, &to_canonical_string(&metrics)?)?;
            if let Some(p) = export_plans {
                let exported: Vec<_> = all
                    .iter()
                    .zip(&plans)
                    .map(|(t, plan)| serde_json::json!({"task_id": t.task_id, "plan": plan}))
                    .collect();
                write(&p, &to_canonical_string(&exported)?)?;
            }
            if let Some(p) = trace {
                let mut dump = String::new();
                for (t, plan) in all.iter().zip(&plans) {
                    dump.push_str(&format!("task={}\n", t.task_id));
                    dump.push_str(&execute_plan(&w, plan, t, kb.as_ref(), retry_budget).dump());
                }
                write(&p, &dump)?;
            }
            Ok(())
        }
        Command::Ablate {
            which,
            world,
            tasks,
            hyper,
            max_rounds,
            explore_seed,
            retry_budget,
            out,
        } => {
            let w = read_world(&world)?;
            let all = read_tasks(&tasks, &w)?;
            let cfg = AblationConfig {
                train: hyper.config(),
                init_seed: hyper.seed,
                explore_rounds: max_rounds,
                explore_seed,
                retry_budget,
                split_seed: hyper.seed,
            };
            let report = run_ablation(&w, &all, &cfg, which)?;
            write(&out, &to_canonical_string(&report)?)
        }
    }
}
