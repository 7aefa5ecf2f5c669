//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or input error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, Layers, Source};
use crate::dqn::{train_dqn, DqnHyperparams};
use crate::env::{render_ascii, DeepCars, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::{format_accuracy, write_svg, RunMetrics};
use crate::nn::{load_model, looks_like_model, save_model};
use crate::policy::{check_network, evaluate_policy, mix_seed, Policy};
use crate::tabular::{train_tabular, QTable};

#[derive(Debug, Parser)]
#[command(
    name = "deepcars",
    version,
    about = "Lane-change agents for the DeepCars highway gridworld"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train an epsilon-greedy tabular Q-learning agent.
    TrainTabular {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Environment steps to train for.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train a DQN or Double-DQN agent with real-time validation.
    TrainDqn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dqn: DqnFlags,
    },
    /// Greedy evaluation of a saved network or Q-table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
    },
    /// Print greedy episodes frame by frame.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: u64,
    },
    /// Plot one or more windows.csv files as an SVG line chart.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated legend labels, one per input.
        #[arg(long)]
        labels: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "rewards.svg")]
        name: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    spawn_interval: Option<usize>,
    #[arg(long)]
    occupancy_prob: Option<f64>,
    #[arg(long)]
    max_episode_steps: Option<u64>,
}

#[derive(Debug, Args)]
struct DqnFlags {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    double_q: bool,
    /// Hidden layer sizes, e.g. 64,128,128,64.
    #[arg(long, value_parser = parse_hidden_flag, conflicts_with = "arch")]
    hidden: Option<String>,
    /// shallow | medium | deep | ddqn16 | ddqn16x16
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    target_sync: Option<u64>,
    #[arg(long)]
    learn_start: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    epsilon_start: Option<f64>,
    #[arg(long)]
    epsilon_end: Option<f64>,
    #[arg(long)]
    epsilon_decay_steps: Option<u64>,
    #[arg(long)]
    fast_val_period: Option<u64>,
    #[arg(long)]
    fast_val_episodes: Option<usize>,
    #[arg(long)]
    deep_val_period: Option<u64>,
    #[arg(long)]
    deep_val_episodes: Option<usize>,
}

fn parse_hidden_flag(s: &str) -> std::result::Result<String, String> {
    config::parse_hidden(s)
        .map(|_| s.to_string())
        .map_err(|e| e.to_string())
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

impl Common {
    fn flags(&self) -> Vec<(String, String)> {
        let mut f = Vec::new();
        push(&mut f, "seed", &self.seed);
        push(&mut f, "lanes", &self.lanes);
        push(&mut f, "rows", &self.rows);
        push(&mut f, "spawn_interval", &self.spawn_interval);
        push(&mut f, "occupancy_prob", &self.occupancy_prob);
        push(&mut f, "max_episode_steps", &self.max_episode_steps);
        f
    }

    fn layers(&self, extra: Vec<(String, String)>) -> Result<Layers> {
        let mut layers = match &self.config {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Usage(format!(
                        "config file {} not found",
                        path.display()
                    )));
                }
                Layers::from_file(path)?
            }
            None => Layers::new(),
        };
        let mut flags = self.flags();
        flags.extend(extra);
        layers.apply(flags, Source::Flag)?;
        Ok(layers)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

impl DqnFlags {
    fn flags(&self) -> Vec<(String, String)> {
        let mut f = Vec::new();
        push(&mut f, "gamma", &self.gamma);
        push(&mut f, "train_steps", &self.steps);
        if self.double_q {
            f.push(("double_q".into(), "true".into()));
        }
        push(&mut f, "hidden", &self.hidden);
        push(&mut f, "arch", &self.arch);
        push(&mut f, "batch_size", &self.batch_size);
        push(&mut f, "replay_capacity", &self.replay_capacity);
        push(&mut f, "target_sync_period", &self.target_sync);
        push(&mut f, "learn_start", &self.learn_start);
        push(&mut f, "learning_rate", &self.lr);
        push(&mut f, "optimizer", &self.optimizer);
        push(&mut f, "epsilon_start", &self.epsilon_start);
        push(&mut f, "epsilon_end", &self.epsilon_end);
        push(&mut f, "epsilon_decay_steps", &self.epsilon_decay_steps);
        push(&mut f, "fast_validation_period", &self.fast_val_period);
        push(&mut f, "fast_validation_episodes", &self.fast_val_episodes);
        push(&mut f, "deep_validation_period", &self.deep_val_period);
        push(&mut f, "deep_validation_episodes", &self.deep_val_episodes);
        f
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout().lock();
    run_with_output(argv, &mut stdout)
}

/// Like [`run`] but sends normal output to `w`. Diagnostics still go to
/// standard error.
pub fn run_with_output<I, T>(argv: I, w: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, w) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Usage(_)
        | Error::Shape(_)
        | Error::Parse { .. }
        | Error::Load { .. } => 2,
        Error::Numeric(_) | Error::Io { .. } => 1,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_windows_plot(metrics: &RunMetrics, label: &str, path: &Path) -> Result<bool> {
    if metrics.windows.is_empty() {
        return Ok(false);
    }
    let series: Vec<(f64, f64)> = metrics
        .windows
        .iter()
        .map(|w| (w.window as f64, w.mean_reward))
        .collect();
    write_svg(&[series], &[label], "mean accumulated reward", path)?;
    Ok(true)
}

fn list_outputs(w: &mut dyn std::io::Write, paths: &[PathBuf]) {
    let _ = writeln!(w, "wrote:");
    for p in paths {
        let _ = writeln!(w, "  {}", p.display());
    }
}

fn csv_paths(dir: &Path) -> Vec<PathBuf> {
    ["steps.csv", "windows.csv", "validation.csv", "counters.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn dispatch(command: Command, w: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::TrainTabular {
            common,
            gamma,
            alpha,
            epsilon,
            steps,
        } => {
            let mut extra = Vec::new();
            push(&mut extra, "gamma", &gamma);
            push(&mut extra, "alpha", &alpha);
            push(&mut extra, "epsilon", &epsilon);
            push(&mut extra, "train_steps", &steps);
            let layers = common.layers(extra)?;
            let env = layers.env_config()?;
            let hp = layers.tabular()?;
            let out = common.out_dir()?;

            let snapshot = out.join("config.resolved");
            write_text(
                &snapshot,
                &(config::env_dump(&env) + &config::tabular_dump(&hp)),
            )?;
            let (table, metrics) = train_tabular(&env, &hp, env.seed)?;

            let table_path = out.join("qtable.txt");
            table.save(&table_path)?;
            metrics.write_csv(out)?;
            let mut written = vec![snapshot, table_path];
            written.extend(csv_paths(out));
            let svg = out.join("windows.svg");
            if write_windows_plot(&metrics, "tabular", &svg)? {
                written.push(svg);
            }
            let _ = writeln!(
                w,
                "trained {} steps, {} states visited, training accuracy {}",
                hp.train_steps,
                table.len(),
                format_accuracy(metrics.accuracy())
            );
            list_outputs(w, &written);
            Ok(())
        }
        Command::TrainDqn { common, dqn } => {
            let layers = common.layers(dqn.flags())?;
            let env = layers.env_config()?;
            let hp = layers.dqn()?;
            let out = common.out_dir()?;

            let snapshot = out.join("config.resolved");
            write_text(&snapshot, &(config::env_dump(&env) + &hp.dump()))?;
            let run = train_dqn(&env, &hp, env.seed)?;

            let final_path = out.join("final_model.txt");
            save_model(&final_path, &run.final_params, hp.optimizer)?;
            run.metrics.write_csv(out)?;
            let mut written = vec![snapshot, final_path];
            match &run.best {
                Some(best) => {
                    let best_path = out.join("best_model.txt");
                    best.save(&best_path, &hp, &env)?;
                    written.push(best_path.clone());
                    written.push(crate::dqn::sidecar_path(&best_path));
                    let _ = writeln!(
                        w,
                        "best validation: mean reward {} (accuracy {}) at step {}",
                        best.mean_validation_reward,
                        format_accuracy(best.accuracy),
                        best.training_step
                    );
                }
                None => {
                    let _ = writeln!(w, "no validation ran; only the final model was saved");
                }
            }
            written.extend(csv_paths(out));
            let svg = out.join("windows.svg");
            let label = if hp.double_q { "DDQN" } else { "DQN" };
            if write_windows_plot(&run.metrics, label, &svg)? {
                written.push(svg);
            }
            let _ = writeln!(
                w,
                "trained {} steps, training accuracy {}",
                hp.train_steps,
                format_accuracy(run.metrics.accuracy())
            );
            list_outputs(w, &written);
            Ok(())
        }
        Command::Evaluate {
            common,
            model,
            steps,
        } => {
            if steps == 0 {
                return Err(Error::Usage("--steps must be at least 1".into()));
            }
            let layers = common.layers(Vec::new())?;
            let env = layers.env_config()?;
            let policy = load_policy(&model, &env)?;
            let out = common.out_dir()?;
            let snapshot = out.join("config.resolved");
            write_text(
                &snapshot,
                &format!(
                    "{}model={}\nsteps={steps}\n",
                    config::env_dump(&env),
                    model.display()
                ),
            )?;
            let metrics = evaluate_policy(policy.as_ref(), &env, steps, env.seed ^ EVAL_SALT)?;
            let eval_dir = out.join("evaluation");
            metrics.write_csv(&eval_dir)?;
            let _ = writeln!(
                w,
                "accuracy: {} (passed {}, collided {}) over {steps} steps",
                format_accuracy(metrics.accuracy()),
                metrics.passed,
                metrics.collided
            );
            let mut written = vec![snapshot];
            written.extend(csv_paths(&eval_dir));
            list_outputs(w, &written);
            Ok(())
        }
        Command::Demo {
            common,
            model,
            episodes,
        } => {
            let layers = common.layers(Vec::new())?;
            let env_cfg = layers.env_config()?;
            let policy = load_policy(&model, &env_cfg)?;
            let out = common.out_dir()?;
            let snapshot = out.join("config.resolved");
            write_text(
                &snapshot,
                &format!(
                    "{}model={}\nepisodes={episodes}\n",
                    config::env_dump(&env_cfg),
                    model.display()
                ),
            )?;
            for ep in 0..episodes {
                demo_episode(policy.as_ref(), &env_cfg, ep, w)?;
            }
            list_outputs(w, &[snapshot]);
            Ok(())
        }
        Command::Plot {
            inputs,
            labels,
            out,
            name,
        } => {
            let labels: Vec<String> = match labels {
                Some(l) => l.split(',').map(str::to_string).collect(),
                None => inputs.iter().map(|p| p.display().to_string()).collect(),
            };
            if labels.len() != inputs.len() {
                return Err(Error::Usage(format!(
                    "{} inputs but {} labels",
                    inputs.len(),
                    labels.len()
                )));
            }
            let mut series = Vec::new();
            for input in &inputs {
                series.push(read_windows(input)?);
            }
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let snapshot = out.join("config.resolved");
            let mut snap = String::new();
            for (input, label) in inputs.iter().zip(&labels) {
                snap.push_str(&format!("input={} label={label}\n", input.display()));
            }
            write_text(&snapshot, &snap)?;
            let path = out.join(&name);
            let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            write_svg(&series, &label_refs, "mean accumulated reward", &path)?;
            list_outputs(w, &[snapshot, path]);
            Ok(())
        }
    }
}

const EVAL_SALT: u64 = 0xE7A1_0000_0000_0001;

fn load_policy(path: &Path, env: &EnvConfig) -> Result<Box<dyn Policy>> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "model file {} not found",
            path.display()
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if looks_like_model(&text) {
        let (params, _) = load_model(path)?;
        check_network(&params, env)?;
        return Ok(Box::new(params) as Box<dyn Policy>);
    }
    let table = QTable::load(path)?;
    if let Some(width) = table.state_width() {
        if width != env.lanes + 1 {
            return Err(Error::Shape(format!(
                "Q-table states have {} lanes but the environment has {} (pass --lanes {})",
                width - 1,
                env.lanes,
                width - 1
            )));
        }
    }
    Ok(Box::new(table))
}

fn demo_episode(
    policy: &dyn Policy,
    cfg: &EnvConfig,
    episode: u64,
    w: &mut dyn std::io::Write,
) -> Result<()> {
    let mut env = DeepCars::reset_with(cfg.clone(), mix_seed(cfg.seed, episode))?;
    let mut total = 0.0;
    let _ = writeln!(w, "episode {}", episode + 1);
    let _ = write!(w, "{}", render_ascii(env.state()));
    loop {
        let action = policy.act(env.state());
        let out = env.step(action)?;
        total += out.reward;
        let _ = writeln!(
            w,
            "step {}: action={} reward={:+}",
            out.next_state.step_count, action, out.reward
        );
        let _ = write!(w, "{}", render_ascii(&out.next_state));
        if out.terminal {
            let how = if out.collided { "collision" } else { "timeout" };
            let _ = writeln!(w, "episode {} reward: {total} ({how})", episode + 1);
            return Ok(());
        }
    }
}

fn read_windows(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "window,mean_reward")) => {}
        _ => {
            return Err(Error::parse(
                path.display(),
                1,
                "expected windows.csv header",
            ))
        }
    }
    let mut pts = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::parse(path.display(), i + 1, format!("malformed row {line:?}"));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let x: f64 = a.parse().map_err(|_| bad())?;
        let y: f64 = b.parse().map_err(|_| bad())?;
        pts.push((x, y));
    }
    if pts.is_empty() {
        return Err(Error::Usage(format!(
            "{} has no windows to plot",
            path.display()
        )));
    }
    Ok(pts)
}

/// Hyperparameters a `train-dqn` invocation would resolve to; used by tests.
pub fn resolve_dqn(argv: &[&str]) -> Result<(EnvConfig, DqnHyperparams)> {
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    match cli.command {
        Command::TrainDqn { common, dqn } => {
            let layers = common.layers(dqn.flags())?;
            Ok((layers.env_config()?, layers.dqn()?))
        }
        _ => Err(Error::Usage("not a train-dqn command line".into())),
    }
}
