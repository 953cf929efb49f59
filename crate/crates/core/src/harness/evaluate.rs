//! Deterministic-policy evaluation and random-policy baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{random_action, Agent};
use crate::envs::{EnvConfig, PixelEnv};
use crate::error::Result;
use crate::rng::derive;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation; 0 for a single episode.
    pub std: f64,
}

impl EvalResult {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalResult {
            returns,
            mean,
            std: var.sqrt(),
        }
    }
}

fn run_episodes(
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&[u8]) -> Result<Vec<f64>>,
) -> Result<EvalResult> {
    let mut seeds = derive(seed, "eval_episodes");
    let mut env = PixelEnv::new(env_cfg.clone())?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.random());
        let mut ret = 0.0;
        loop {
            let a = policy(&obs)?;
            let s = env.step(&a)?;
            ret += s.reward;
            obs = s.obs;
            if s.truncated {
                break;
            }
        }
        returns.push(ret);
    }
    Ok(EvalResult::from_returns(returns))
}

/// Runs `episodes` episodes with `tanh(mean)` actions on fresh environments
/// seeded from `seed`. The agent is only read.
pub fn evaluate(agent: &Agent, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    // deterministic actions never touch this generator
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    run_episodes(env_cfg, episodes, seed, |obs| agent.act(obs, true, &mut unused))
}

/// Returns of a uniform random policy.
pub fn random_policy_baseline(env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut rng = derive(seed, "random_policy");
    let dim = env_cfg.kind.action_dim();
    run_episodes(env_cfg, episodes, seed, |_| Ok(random_action(dim, &mut rng)))
}
