//! Epsilon-greedy tabular Q-learning over the per-lane distance state.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::{encode_tabular, TabularState};
use crate::env::{Action, DeepCars, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::policy::{evaluate_policy, mix_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularHyperparams {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub train_steps: u64,
}

impl Default for TabularHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            alpha: 0.1,
            epsilon: 0.2,
            train_steps: 50_000,
        }
    }
}

impl TabularHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Sparse Q-table; absent states read as all-zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    entries: BTreeMap<TabularState, [f64; 3]>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, s: &TabularState) -> [f64; 3] {
        self.entries.get(s).copied().unwrap_or([0.0; 3])
    }

    pub fn set(&mut self, s: TabularState, values: [f64; 3]) {
        self.entries.insert(s, values);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TabularState, &[f64; 3])> {
        self.entries.iter()
    }

    pub fn greedy(&self, s: &TabularState) -> Action {
        let q = self.get(s);
        let mut best = 0;
        for a in 1..3 {
            if q[a] > q[best] {
                best = a;
            }
        }
        Action::from_code(best).unwrap()
    }

    /// One-step Q-learning backup of `(s, a)`; the bootstrap term is dropped
    /// at terminal states.
    #[allow(clippy::too_many_arguments)]
    pub fn q_update(
        &mut self,
        s: &TabularState,
        a: Action,
        r: f64,
        s_next: &TabularState,
        terminal: bool,
        hp: &TabularHyperparams,
    ) -> Result<()> {
        if !r.is_finite() || !hp.alpha.is_finite() || !hp.gamma.is_finite() {
            return Err(Error::Numeric(format!(
                "q_update got r={r}, alpha={}, gamma={}",
                hp.alpha, hp.gamma
            )));
        }
        let bootstrap = if terminal {
            0.0
        } else {
            self.get(s_next)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let entry = self.entries.entry(s.clone()).or_insert([0.0; 3]);
        let old = entry[a.code()];
        let new = old + hp.alpha * (r + hp.gamma * bootstrap - old);
        if !new.is_finite() {
            return Err(Error::Numeric(format!("Q-value became {new}")));
        }
        entry[a.code()] = new;
        Ok(())
    }

    /// Uniform random action with probability `epsilon`, else greedy.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        s: &TabularState,
        epsilon: f64,
        rng: &mut R,
    ) -> Action {
        if rng.random::<f64>() < epsilon {
            Action::from_code(rng.random_range(0..Action::COUNT)).unwrap()
        } else {
            self.greedy(s)
        }
    }

    /// One line per state: `lane d0 .. dn | q_left q_stay q_right`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (state, q) in &self.entries {
            let key: Vec<String> = state.to_vec().iter().map(ToString::to_string).collect();
            writeln!(s, "{} | {} {} {}", key.join(" "), q[0], q[1], q[2]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut table = QTable::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, vals) = line
                .split_once('|')
                .ok_or_else(|| Error::parse(origin, ln, "missing '|' separator"))?;
            let key: Vec<u16> = key
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(origin, ln, format!("bad state value {t:?}")))
                })
                .collect::<Result<_>>()?;
            let state = TabularState::from_slice(&key)
                .ok_or_else(|| Error::parse(origin, ln, "state needs a lane id and distances"))?;
            let q: Vec<f64> = vals
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(origin, ln, format!("bad Q-value {t:?}")))
                })
                .collect::<Result<_>>()?;
            if q.len() != 3 || q.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(origin, ln, "expected three finite Q-values"));
            }
            table.entries.insert(state, [q[0], q[1], q[2]]);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Number of state variables per record (lane id + distances), if any.
    pub fn state_width(&self) -> Option<usize> {
        self.entries.keys().next().map(|s| s.distances.len() + 1)
    }
}

const EPISODE_STREAM: u64 = 0x005E_ED0F_E915_0DE5;

/// Epsilon-greedy training for `hp.train_steps` environment steps.
pub fn train_tabular(
    config: &EnvConfig,
    hp: &TabularHyperparams,
    seed: u64,
) -> Result<(QTable, RunMetrics)> {
    config.validate()?;
    hp.validate()?;
    let mut table = QTable::new();
    let mut metrics = RunMetrics::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episode_seeds = seed ^ EPISODE_STREAM;

    let mut episode = 0u64;
    let mut env = DeepCars::reset_with(config.clone(), mix_seed(episode_seeds, 0))?;
    let mut s = encode_tabular(env.state());
    let mut episode_reward = 0.0;
    for step in 1..=hp.train_steps {
        let a = table.select_action(&s, hp.epsilon, &mut rng);
        let out = env.step(a)?;
        let s_next = encode_tabular(&out.next_state);
        table.q_update(&s, a, out.reward, &s_next, out.collided, hp)?;

        metrics.passed += out.cars_passed_this_step;
        metrics.collided += u64::from(out.collided);
        metrics.record_step(step, episode, out.reward, hp.epsilon);
        episode_reward += out.reward;

        if out.terminal {
            metrics.end_episode(episode_reward, step);
            episode_reward = 0.0;
            episode += 1;
            s = encode_tabular(env.reset(mix_seed(episode_seeds, episode)));
        } else {
            s = s_next;
        }
    }
    Ok((table, metrics))
}

/// Greedy rollout of a fixed table.
pub fn evaluate_tabular(
    table: &QTable,
    config: &EnvConfig,
    steps: u64,
    seed: u64,
) -> Result<RunMetrics> {
    if steps == 0 {
        return Err(Error::Usage("evaluation needs at least one step".into()));
    }
    evaluate_policy(table, config, steps, seed)
}
