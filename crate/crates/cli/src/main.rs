use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use newt_core::config::TrainConfig;
use newt_core::metrics::{read_metrics, MetricsWriter};
use newt_core::tasks::{make_spec, registry, TRANSFER_TASKS};
use newt_core::trainer::{
    bc_train, collect_demos, evaluate, finetune, load_demo_buffer, pretrain, train, Agent,
    EvalMode,
};
use std::path::PathBuf;

mod plot;

#[derive(Parser)]
#[command(name = "newt", about = "Multitask model-based RL engine on a built-in toy task suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in tasks.
    Tasks,
    /// Roll the scripted expert and write accepted episodes to a demo file.
    CollectDemos {
        #[arg(long)]
        task: String,
        /// Episodes to accept (10-40 is typical).
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Model-based pretraining on demonstration files.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Demo files (one per task or combined).
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Online multitask RL, optionally resuming from a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        /// Checkpoint to start from (a pretrain output or a previous
        /// train checkpoint to resume).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Behavior-cloning baseline (encoder + policy only).
    Bc {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Tasks to evaluate; defaults to the checkpoint's task list.
        #[arg(long, num_args = 0..)]
        tasks: Vec<String>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// closed | open | prior
        #[arg(long, default_value = "closed")]
        mode: String,
        /// Open-loop window length (open mode only).
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Finetune a checkpoint on a single (possibly unseen) task with
    /// online RL, no demonstrations, and no planner bias.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also train a from-scratch agent for comparison curves.
        #[arg(long, default_value_t = false)]
        compare_scratch: bool,
    },
    /// Render static SVG plots from a metrics file.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_file(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(TrainConfig::default_desk()),
    }
}

fn open_metrics(path: &Option<PathBuf>) -> Result<MetricsWriter> {
    Ok(match path {
        Some(p) => MetricsWriter::to_file(p)?,
        None => MetricsWriter::in_memory(),
    })
}

fn print_report(label: &str, report: &newt_core::trainer::EvalReport) {
    for score in &report.scores {
        println!("{label} {:<16} {:.3}", score.task, score.score);
    }
    println!("{label} {:<16} {:.3} (fallbacks: {})", "mean", report.mean, report.fallbacks);
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Tasks => {
            let suite = newt_core::tasks::SuiteConfig::default_desk();
            println!("training tasks:");
            for name in registry() {
                let spec = make_spec(name, &suite, None)?;
                println!(
                    "  {:<16} state {}d action {}d T={} gamma={:.3} {}",
                    spec.name,
                    spec.state_dim_native,
                    spec.action_dim_native,
                    spec.episode_len,
                    spec.gamma,
                    match spec.scoring {
                        newt_core::tasks::Scoring::Success => "success-scored".to_string(),
                        newt_core::tasks::Scoring::Return { lo, hi } =>
                            format!("return-scored [{lo}, {hi}]"),
                    }
                );
            }
            println!("transfer tasks:");
            for name in TRANSFER_TASKS {
                let spec = make_spec(name, &suite, None)?;
                println!("  {:<16} T={}", spec.name, spec.episode_len);
            }
        }
        Command::CollectDemos {
            task,
            n,
            out,
            config,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let stats = collect_demos(&cfg, &task, n, &out, seed)?;
            println!(
                "accepted {}/{} attempts (mean score {:.3}) -> {}",
                stats.accepted,
                stats.attempts,
                stats.mean_score,
                out.display()
            );
        }
        Command::Pretrain {
            config,
            demos,
            out,
            metrics,
        } => {
            let cfg = load_config(&config)?;
            let mut writer = open_metrics(&metrics)?;
            let agent = pretrain(&cfg, &demos, &out, &mut writer)?;
            let report = evaluate(&agent, &cfg.tasks, cfg.eval_episodes, EvalMode::Prior, cfg.seed, None)?;
            print_report("pretrain", &report);
            println!("checkpoint -> {}", out.display());
        }
        Command::Train {
            config,
            demos,
            resume,
            out,
            metrics,
        } => {
            let mut writer = open_metrics(&metrics)?;
            let mut agent = match &resume {
                Some(p) => Agent::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => {
                    let cfg = load_config(&config)?;
                    Agent::new(cfg)?
                }
            };
            if let Some(cfg_path) = &config {
                if resume.is_some() {
                    // resuming with an explicit config replaces run settings
                    let cfg = TrainConfig::from_file(cfg_path)?;
                    agent.config = cfg;
                }
            }
            let mut buffer = load_demo_buffer(&agent.config, &demos)?;
            train(&mut agent, &mut buffer, &out, &mut writer)?;
            let report = evaluate(
                &agent,
                &agent.config.tasks.clone(),
                agent.config.eval_episodes,
                EvalMode::Closed,
                agent.config.seed,
                None,
            )?;
            print_report("train", &report);
            println!("checkpoint -> {}", out.display());
        }
        Command::Bc {
            config,
            demos,
            out,
            metrics,
        } => {
            let cfg = load_config(&config)?;
            let mut writer = open_metrics(&metrics)?;
            let agent = bc_train(&cfg, &demos, &out, &mut writer)?;
            let report = evaluate(&agent, &cfg.tasks, cfg.eval_episodes, EvalMode::Prior, cfg.seed, None)?;
            print_report("bc", &report);
            println!("checkpoint -> {}", out.display());
        }
        Command::Eval {
            ckpt,
            tasks,
            episodes,
            mode,
            horizon,
            seed,
        } => {
            let agent = Agent::load(&ckpt)?;
            let task_list = if tasks.is_empty() {
                agent.config.tasks.clone()
            } else {
                tasks
            };
            let eval_mode = match mode.as_str() {
                "closed" => EvalMode::Closed,
                "open" => EvalMode::Open { horizon },
                "prior" => EvalMode::Prior,
                other => bail!("unknown eval mode '{other}' (closed | open | prior)"),
            };
            let report = evaluate(&agent, &task_list, episodes, eval_mode, seed, None)?;
            let label = match eval_mode {
                EvalMode::Closed => "closed".to_string(),
                EvalMode::Open { horizon } => format!("open:{horizon}"),
                EvalMode::Prior => "prior".to_string(),
            };
            print_report(&label, &report);
            if let EvalMode::Open { .. } = eval_mode {
                let closed = evaluate(&agent, &task_list, episodes, EvalMode::Closed, seed, None)?;
                for (o, c) in report.scores.iter().zip(&closed.scores) {
                    let frac = if c.score > 0.0 { o.score / c.score } else { f64::NAN };
                    println!("fraction-of-closed {:<16} {:.3}", o.task, frac);
                }
            }
        }
        Command::Finetune {
            ckpt,
            task,
            config,
            out,
            metrics,
            compare_scratch,
        } => {
            let mut writer = open_metrics(&metrics)?;
            let mut agent = Agent::load(&ckpt)?;
            if let Some(cfg_path) = &config {
                agent.config = TrainConfig::from_file(cfg_path)?;
            }
            agent.env_steps = 0;
            agent.rl_updates = 0;
            finetune(&mut agent, &task, &out, &mut writer)?;
            let report = evaluate(&agent, &[task.clone()], agent.config.eval_episodes, EvalMode::Closed, agent.config.seed, None)?;
            print_report("finetuned", &report);
            if compare_scratch {
                let mut scratch = Agent::new(agent.config.clone())?;
                let scratch_out = out.with_extension("scratch.ckpt");
                finetune(&mut scratch, &task, &scratch_out, &mut writer)?;
                let report = evaluate(&scratch, &[task.clone()], scratch.config.eval_episodes, EvalMode::Closed, scratch.config.seed, None)?;
                print_report("scratch", &report);
            }
            println!("checkpoint -> {}", out.display());
        }
        Command::Plot { metrics, out_dir } => {
            let records = read_metrics(&metrics)?;
            std::fs::create_dir_all(&out_dir)?;
            let written = plot::render_all(&records, &out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
