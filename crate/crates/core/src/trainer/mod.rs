//! Orchestration: demonstration collection with rejection, model-based
//! pretraining, online multitask RL with UTD accounting and bias-annealed
//! constrained planning, the behavior-cloning baseline, closed- and
//! open-loop evaluation, finetuning, and checkpointing.

mod agent;
mod run;

pub use agent::{Agent, UpdateStats};
pub use run::{
    bc_train, collect_demos, collect_demos_with_policy, evaluate, finetune, load_demo_buffer,
    pretrain, random_policy_report, train, CollectStats, EvalMode, EvalReport, TaskScore,
};
