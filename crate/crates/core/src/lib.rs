//! Plan-then-execute multi-hop tool use at desk scale.
//!
//! A seeded [`toolworld`] supplies tools with hidden argument constraints and
//! multi-hop tasks. The [`explorer`] probes every tool offline and records
//! validated invocation templates. A linear-softmax [`planner`] emits whole
//! plans and is trained by group-relative clipped policy optimization
//! ([`grpo`]) against the step-wise plan [`reward`]. The [`executor`] runs
//! plans with knowledge-base argument binding, and the [`harness`] ties it all
//! together into success-rate / invocation-error-rate evaluation and ablations.

pub mod canonical_json;
pub mod executor;
pub mod explorer;
pub mod grpo;
pub mod harness;
pub mod plan;
pub mod planner;
pub mod reward;
pub(crate) mod seeding;
pub mod toolworld;

pub use plan::{Plan, PlanStep};
