//! DQN / Double-DQN with experience replay, a periodically synced target
//! network, and two-cadence greedy validation that keeps the best-scoring
//! parameters seen during training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encode::{dqn_input_len, encode_dqn, DqnState};
use crate::env::{Action, DeepCars, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, RunMetrics, ValidationRecord};
use crate::nn::{init_params, sgd_step, MlpGrads, MlpParams, OptimizerKind, OptimizerState};
use crate::policy::{mix_seed, run_episode};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: DqnState,
    pub action: Action,
    pub reward: f64,
    pub next_state: DqnState,
    /// Collision only; step-cap timeouts are stored as non-terminal so the
    /// target still bootstraps.
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Uniform indices with replacement. `None` (not ready) when fewer than
    /// `batch_size` transitions are stored.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<usize>> {
        if self.storage.is_empty() || self.storage.len() < batch_size {
            return None;
        }
        Some(self.draw(batch_size, rng))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<&Transition>> {
        self.sample_indices(batch_size, rng)
            .map(|idx| idx.into_iter().map(|i| &self.storage[i]).collect())
    }

    /// Samples with replacement from whatever is stored, even fewer than
    /// `batch_size` entries. `None` only when empty.
    pub fn sample_any<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<&Transition>> {
        if self.storage.is_empty() {
            return None;
        }
        Some(
            self.draw(batch_size, rng)
                .into_iter()
                .map(|i| &self.storage[i])
                .collect(),
        )
    }

    fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n)
            .map(|_| rng.random_range(0..self.storage.len()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnHyperparams {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Steps between target-network syncs.
    pub target_sync_period: u64,
    pub train_steps: u64,
    /// Transitions collected before the first gradient step.
    pub learn_start: usize,
    pub double_q: bool,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub fast_validation_period: u64,
    pub fast_validation_episodes: usize,
    pub deep_validation_period: u64,
    pub deep_validation_episodes: usize,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            batch_size: 32,
            replay_capacity: 50_000,
            target_sync_period: 1_000,
            train_steps: 500_000,
            learn_start: 1_000,
            double_q: false,
            hidden: vec![16],
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            fast_validation_period: 2_000,
            fast_validation_episodes: 20,
            deep_validation_period: 20_000,
            deep_validation_episodes: 100,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon_decay_steps", self.epsilon_decay_steps),
            ("batch_size", self.batch_size as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("target_sync_period", self.target_sync_period),
            ("fast_validation_period", self.fast_validation_period),
            (
                "fast_validation_episodes",
                self.fast_validation_episodes as u64,
            ),
            ("deep_validation_period", self.deep_validation_period),
            (
                "deep_validation_episodes",
                self.deep_validation_episodes as u64,
            ),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) {
            return Err(Error::Config("epsilon bounds must lie in [0, 1]".into()));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::Config(format!(
                "epsilon_end {} exceeds epsilon_start {}",
                self.epsilon_end, self.epsilon_start
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "zero-width hidden layer in {:?}",
                self.hidden
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then flat.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }

    pub fn layer_dims(&self, config: &EnvConfig) -> Vec<usize> {
        let mut dims = vec![dqn_input_len(config)];
        dims.extend(&self.hidden);
        dims.push(Action::COUNT);
        dims
    }

    /// `key=value` lines, used for checkpoint sidecars.
    pub fn dump(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        let mut s = String::new();
        writeln!(s, "gamma={}", self.gamma).unwrap();
        writeln!(s, "epsilon_start={}", self.epsilon_start).unwrap();
        writeln!(s, "epsilon_end={}", self.epsilon_end).unwrap();
        writeln!(s, "epsilon_decay_steps={}", self.epsilon_decay_steps).unwrap();
        writeln!(s, "batch_size={}", self.batch_size).unwrap();
        writeln!(s, "replay_capacity={}", self.replay_capacity).unwrap();
        writeln!(s, "target_sync_period={}", self.target_sync_period).unwrap();
        writeln!(s, "train_steps={}", self.train_steps).unwrap();
        writeln!(s, "learn_start={}", self.learn_start).unwrap();
        writeln!(s, "double_q={}", self.double_q).unwrap();
        writeln!(s, "hidden={}", hidden.join(",")).unwrap();
        writeln!(s, "learning_rate={}", self.learning_rate).unwrap();
        writeln!(s, "optimizer={}", self.optimizer.tag()).unwrap();
        writeln!(s, "fast_validation_period={}", self.fast_validation_period).unwrap();
        writeln!(
            s,
            "fast_validation_episodes={}",
            self.fast_validation_episodes
        )
        .unwrap();
        writeln!(s, "deep_validation_period={}", self.deep_validation_period).unwrap();
        writeln!(
            s,
            "deep_validation_episodes={}",
            self.deep_validation_episodes
        )
        .unwrap();
        s
    }
}

fn max_q(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_finite(q: &[f64], which: &str) -> Result<()> {
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{which} network produced {q:?}")))
    }
}

/// Regression targets for a mini-batch. Terminal transitions use the bare
/// reward. Otherwise DQN bootstraps from `max_a' Q_target(s', a')`, and
/// Double-DQN evaluates the online network's greedy action with the target
/// network.
pub fn td_targets(
    batch: &[&Transition],
    online: &MlpParams,
    target: &MlpParams,
    gamma: f64,
    double_q: bool,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.reward);
            }
            let q_next = target.forward(&t.next_state.values)?;
            check_finite(&q_next, "target")?;
            let bootstrap = if double_q {
                let q_online = online.forward(&t.next_state.values)?;
                check_finite(&q_online, "online")?;
                q_next[MlpParams::argmax(&q_online)]
            } else {
                max_q(&q_next)
            };
            Ok(t.reward + gamma * bootstrap)
        })
        .collect()
}

/// Gradient of the mean squared TD error over the batch. Only the taken
/// action's output receives error. Returns the gradients and the loss.
pub fn td_gradient(
    online: &MlpParams,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(MlpGrads, f64)> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::Shape(format!(
            "{} transitions but {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let n = batch.len() as f64;
    let mut grads = online.zeros_like();
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; online.output_len()];
    for (t, &y) in batch.iter().zip(targets) {
        let q = online.forward(&t.state.values)?;
        check_finite(&q, "online")?;
        let err = q[t.action.code()] - y;
        loss += err * err / n;
        out_grad.fill(0.0);
        out_grad[t.action.code()] = 2.0 * err / n;
        online.backward_into(&t.state.values, &out_grad, &mut grads)?;
    }
    Ok((grads, loss))
}

/// One optimizer step on a batch against fixed targets; returns the loss
/// before the step.
pub fn fit_batch(
    online: &mut MlpParams,
    opt: &mut OptimizerState,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<f64> {
    let (grads, loss) = td_gradient(online, batch, targets)?;
    sgd_step(online, &grads, opt)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub mean_reward: f64,
    pub accuracy: Option<f64>,
    pub passed: u64,
    pub collided: u64,
    pub steps: u64,
}

/// Greedy episodes with frozen parameters. Episode `i` uses seed
/// `mix_seed(seed, i)`; episodes run in parallel and are reduced in index
/// order.
pub fn validate(
    params: &MlpParams,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<ValidationScore> {
    if episodes == 0 {
        return Err(Error::Usage("validation needs at least one episode".into()));
    }
    crate::policy::check_network(params, config)?;
    let results: Vec<_> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(params, config, mix_seed(seed, i)))
        .collect::<Result<_>>()?;
    let mut score = ValidationScore {
        mean_reward: 0.0,
        accuracy: None,
        passed: 0,
        collided: 0,
        steps: 0,
    };
    let mut total = 0.0;
    for r in &results {
        total += r.reward;
        score.passed += r.passed;
        score.collided += u64::from(r.collided);
        score.steps += r.steps;
    }
    score.mean_reward = total / episodes as f64;
    score.accuracy = accuracy(score.passed, score.collided);
    Ok(score)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub mean_validation_reward: f64,
    pub accuracy: Option<f64>,
    pub training_step: u64,
}

impl Checkpoint {
    /// Model file plus a `<path>.meta` sidecar with the score and the full
    /// hyperparameter set.
    pub fn save(&self, path: &Path, hp: &DqnHyperparams, config: &EnvConfig) -> Result<()> {
        crate::nn::save_model(path, &self.params, hp.optimizer)?;
        let mut meta = String::new();
        writeln!(meta, "training_step={}", self.training_step).unwrap();
        writeln!(
            meta,
            "mean_validation_reward={}",
            self.mean_validation_reward
        )
        .unwrap();
        let acc = self.accuracy.map_or("n/a".to_string(), |a| a.to_string());
        writeln!(meta, "validation_accuracy={acc}").unwrap();
        meta.push_str(&crate::config::env_dump(config));
        meta.push_str(&hp.dump());
        let meta_path = sidecar_path(path);
        fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
    }
}

pub fn sidecar_path(model: &Path) -> std::path::PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Salt separating validation scenarios from training episodes.
pub const VALIDATION_SALT: u64 = 0xA5A5_5A5A_C3C3_3C3C;
const EPISODE_SALT: u64 = 0x000D_D5EE_D50F_CA25;
const INIT_SALT: u64 = 0x1217_0000_BEEF;

/// Full training state; [`train_step`](Self::train_step) advances it by one
/// environment step.
pub struct DqnTrainer {
    pub config: EnvConfig,
    pub hp: DqnHyperparams,
    pub online: MlpParams,
    pub target: MlpParams,
    pub opt: OptimizerState,
    pub buffer: ReplayBuffer,
    pub metrics: RunMetrics,
    pub best: Option<Checkpoint>,
    /// (step, score) of every recorded checkpoint, in order.
    pub checkpoint_history: Vec<(u64, f64)>,
    pub step: u64,
    pub episode: u64,
    pub last_loss: Option<f64>,
    env: DeepCars,
    obs: DqnState,
    episode_reward: f64,
    rng: ChaCha8Rng,
    episode_seeds: u64,
    validation_seed: u64,
}

impl DqnTrainer {
    pub fn new(config: EnvConfig, hp: DqnHyperparams, seed: u64) -> Result<Self> {
        config.validate()?;
        hp.validate()?;
        let dims = hp.layer_dims(&config);
        let online = init_params(&dims, seed ^ INIT_SALT)?;
        let target = online.clone();
        let opt = OptimizerState::new(hp.optimizer, hp.learning_rate, &online)?;
        let episode_seeds = seed ^ EPISODE_SALT;
        let env = DeepCars::reset_with(config.clone(), mix_seed(episode_seeds, 0))?;
        let obs = encode_dqn(env.state());
        Ok(Self {
            buffer: ReplayBuffer::new(hp.replay_capacity),
            metrics: RunMetrics::new(),
            best: None,
            checkpoint_history: Vec::new(),
            step: 0,
            episode: 0,
            last_loss: None,
            env,
            obs,
            episode_reward: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episode_seeds,
            validation_seed: seed ^ VALIDATION_SALT,
            online,
            target,
            opt,
            config,
            hp,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.hp.epsilon_at(self.step)
    }

    fn select_action(&mut self) -> Result<Action> {
        let eps = self.epsilon();
        if self.rng.random::<f64>() < eps {
            return Ok(Action::from_code(self.rng.random_range(0..Action::COUNT)).unwrap());
        }
        let q = self.online.forward(&self.obs.values)?;
        check_finite(&q, "online")?;
        Ok(Action::from_code(MlpParams::argmax(&q)).unwrap())
    }

    /// One environment step, one replay push, one gradient step once the
    /// warm-up is met, then target sync and validation on their periods.
    pub fn train_step(&mut self) -> Result<()> {
        let epsilon = self.epsilon();
        let action = self.select_action()?;
        let out = self.env.step(action)?;
        self.step += 1;
        let next_obs = encode_dqn(&out.next_state);
        self.buffer.push(Transition {
            state: std::mem::replace(&mut self.obs, next_obs.clone()),
            action,
            reward: out.reward,
            next_state: next_obs,
            terminal: out.collided,
        });

        self.metrics.passed += out.cars_passed_this_step;
        self.metrics.collided += u64::from(out.collided);
        self.metrics
            .record_step(self.step, self.episode, out.reward, epsilon);
        self.episode_reward += out.reward;
        if out.terminal {
            self.metrics.end_episode(self.episode_reward, self.step);
            self.episode_reward = 0.0;
            self.episode += 1;
            let seed = mix_seed(self.episode_seeds, self.episode);
            self.obs = encode_dqn(self.env.reset(seed));
        }

        if self.buffer.len() >= self.hp.learn_start.max(1) {
            if let Some(idx) = self
                .buffer
                .sample_indices(self.hp.batch_size, &mut self.rng)
            {
                let batch: Vec<&Transition> =
                    idx.iter().map(|&i| &self.buffer.storage[i]).collect();
                let targets = td_targets(
                    &batch,
                    &self.online,
                    &self.target,
                    self.hp.gamma,
                    self.hp.double_q,
                )?;
                let loss = fit_batch(&mut self.online, &mut self.opt, &batch, &targets)?;
                self.last_loss = Some(loss);
            }
        }

        if self.step.is_multiple_of(self.hp.target_sync_period) {
            self.online.clone_into(&mut self.target)?;
        }

        if self.step.is_multiple_of(self.hp.deep_validation_period) {
            self.run_validation(self.hp.deep_validation_episodes)?;
        } else if self.step.is_multiple_of(self.hp.fast_validation_period) {
            self.run_validation(self.hp.fast_validation_episodes)?;
        }
        Ok(())
    }

    fn run_validation(&mut self, episodes: usize) -> Result<()> {
        let score = validate(&self.online, &self.config, episodes, self.validation_seed)?;
        let is_new_best = self
            .best
            .as_ref()
            .is_none_or(|b| score.mean_reward > b.mean_validation_reward);
        if is_new_best {
            self.best = Some(Checkpoint {
                params: self.online.clone(),
                mean_validation_reward: score.mean_reward,
                accuracy: score.accuracy,
                training_step: self.step,
            });
            self.checkpoint_history.push((self.step, score.mean_reward));
        }
        self.metrics.validations.push(ValidationRecord {
            step: self.step,
            mean_reward: score.mean_reward,
            accuracy: score.accuracy,
            is_new_best,
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DqnRun {
    pub best: Option<Checkpoint>,
    pub final_params: MlpParams,
    pub metrics: RunMetrics,
    pub checkpoint_history: Vec<(u64, f64)>,
}

pub fn train_dqn(config: &EnvConfig, hp: &DqnHyperparams, seed: u64) -> Result<DqnRun> {
    let mut trainer = DqnTrainer::new(config.clone(), hp.clone(), seed)?;
    while trainer.step < hp.train_steps {
        trainer.train_step()?;
    }
    Ok(DqnRun {
        best: trainer.best,
        final_params: trainer.online,
        metrics: trainer.metrics,
        checkpoint_history: trainer.checkpoint_history,
    })
}
