//! Decentralized evaluation of trained populations.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, EnvConfig, ParticleWorld};
use crate::error::Result;
use crate::policy::PolicyParams;
use crate::trainer::derive_seed;
use crate::trainer::rollout::{mean, sample_action};
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub good_mean: f64,
    pub good_var: f64,
    pub adv_mean: f64,
    pub adv_var: f64,
    /// `(good, adversary)` extrinsic return per episode.
    pub episode_returns: Vec<(f64, f64)>,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Plays `n_episodes` with stochastic actions. Each agent's action comes from
/// [`PolicyParams::action_logits`] on its own observation; no labels, other
/// agents' internals or intrinsic rewards are consulted.
pub fn evaluate_policy(
    env: &EnvConfig,
    good: &PolicyParams,
    adv: &PolicyParams,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let world = ParticleWorld::new(env.clone())?;
    let n_good = env.n_good;
    let mut episode_seeds = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 201));
    let mut returns = Vec::with_capacity(n_episodes);
    let mut trajectory = Vec::new();
    for episode in 0..n_episodes {
        let (mut state, mut obs) = world.reset(episode_seeds.next_u64());
        let (mut ret_good, mut ret_adv) = (0.0, 0.0);
        loop {
            let good_obs = ndarray::Array2::from_shape_fn((n_good, obs[0].len()), |(i, j)| obs[i][j]);
            let adv_obs = ndarray::Array2::from_shape_fn((1, obs[0].len()), |(_, j)| obs[n_good][j]);
            let good_logits = good.action_logits(good_obs.view())?;
            let adv_logits = adv.action_logits(adv_obs.view())?;
            let mut actions = Vec::with_capacity(n_good + 1);
            for i in 0..n_good {
                actions.push(sample_action(good_logits.row(i).as_slice().expect("contiguous"), &mut rng).0);
            }
            actions.push(sample_action(adv_logits.row(0).as_slice().expect("contiguous"), &mut rng).0);
            let joint: Vec<Action> = actions.iter().map(|&a| Action::try_from(a)).collect::<Result<_>>()?;
            let step = world.step(&state, &joint)?;
            ret_good += step.rewards[0];
            ret_adv += step.rewards[n_good];
            trajectory.push(TrajectoryRecord {
                episode,
                t: step.next_state.t,
                positions: step.next_state.agent_pos.clone(),
                actions,
                rewards: step.rewards.clone(),
                target_index: step.next_state.target_index,
            });
            if step.done {
                break;
            }
            state = step.next_state;
            obs = step.observations;
        }
        returns.push((ret_good, ret_adv));
    }
    let good: Vec<f64> = returns.iter().map(|r| r.0).collect();
    let adv_r: Vec<f64> = returns.iter().map(|r| r.1).collect();
    Ok(EvalReport {
        good_mean: mean(&good),
        good_var: sample_variance(&good),
        adv_mean: mean(&adv_r),
        adv_var: sample_variance(&adv_r),
        episode_returns: returns,
        trajectory,
    })
}
