//! Greedy policies and the rollout loop shared by evaluation and validation.

use crate::encode::{encode_dqn, encode_tabular};
use crate::env::{Action, DeepCars, EnvConfig, EnvState};
use crate::error::Result;
use crate::metrics::RunMetrics;
use crate::nn::MlpParams;
use crate::tabular::QTable;

pub trait Policy {
    fn act(&self, state: &EnvState) -> Action;
}

impl Policy for QTable {
    fn act(&self, state: &EnvState) -> Action {
        self.greedy(&encode_tabular(state))
    }
}

/// Greedy action of a value network fed the occupancy-grid observation.
/// Panics if the network input width does not match the environment; check
/// with [`check_network`] first.
impl Policy for MlpParams {
    fn act(&self, state: &EnvState) -> Action {
        let q = self
            .forward(&encode_dqn(state).values)
            .expect("network input width matches observation");
        Action::from_code(MlpParams::argmax(&q)).unwrap()
    }
}

impl<F: Fn(&EnvState) -> Action> Policy for F {
    fn act(&self, state: &EnvState) -> Action {
        self(state)
    }
}

pub fn check_network(params: &MlpParams, config: &EnvConfig) -> Result<()> {
    let want = crate::encode::dqn_input_len(config);
    if params.input_len() != want || params.output_len() != Action::COUNT {
        return Err(crate::Error::Shape(format!(
            "network {:?} does not fit a {}x{} environment (needs input {want}, output {})",
            params.layer_dims,
            config.rows,
            config.lanes,
            Action::COUNT
        )));
    }
    Ok(())
}

/// SplitMix64 finaliser; turns a base seed and an index into an independent
/// seed.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `policy` greedily for exactly `steps` environment steps, resetting
/// after every terminal state. Episode `i` uses seed `mix_seed(seed, i)`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    steps: u64,
    seed: u64,
) -> Result<RunMetrics> {
    let mut metrics = RunMetrics::new();
    let mut episode = 0u64;
    let mut env = DeepCars::reset_with(config.clone(), mix_seed(seed, episode))?;
    let mut episode_reward = 0.0;
    for step in 1..=steps {
        let action = policy.act(env.state());
        let out = env.step(action)?;
        metrics.passed += out.cars_passed_this_step;
        metrics.collided += u64::from(out.collided);
        metrics.record_step(step, episode, out.reward, 0.0);
        episode_reward += out.reward;
        if out.terminal {
            metrics.end_episode(episode_reward, step);
            episode_reward = 0.0;
            episode += 1;
            env.reset(mix_seed(seed, episode));
        }
    }
    Ok(metrics)
}

/// Outcome of one greedy episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub reward: f64,
    pub steps: u64,
    pub passed: u64,
    pub collided: bool,
}

pub fn run_episode<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut env = DeepCars::reset_with(config.clone(), seed)?;
    let mut result = EpisodeResult {
        reward: 0.0,
        steps: 0,
        passed: 0,
        collided: false,
    };
    loop {
        let out = env.step(policy.act(env.state()))?;
        result.reward += out.reward;
        result.steps += 1;
        result.passed += out.cars_passed_this_step;
        if out.terminal {
            result.collided = out.collided;
            return Ok(result);
        }
    }
}
