//! One-dimensional move-to-target task.
//!
//! An agent sits on an integer line in `[-half_range, half_range]` and must
//! walk to the origin. Reward is progress toward it, `|x| - |x'|`, so the best
//! attainable return of an episode is `|x_0|`. Used to check that the PPO
//! machinery learns when all belief components are bypassed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, NUM_ACTIONS};
use crate::error::Result;
use crate::policy::{Architecture, PolicyParams, PolicySpec};
use crate::trainer::alternate::{update_population, PopulationSlot};
use crate::trainer::buffer::{compute_gae, RolloutBuffer, Sample, Stream};
use crate::trainer::rollout::sample_action;
use crate::trainer::{derive_seed, PopulationSetup, Role, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineTask {
    pub half_range: i64,
    pub horizon: usize,
}

impl Default for LineTask {
    fn default() -> Self {
        Self {
            half_range: 10,
            horizon: 20,
        }
    }
}

impl LineTask {
    pub fn observe(&self, x: i64) -> Vec<f64> {
        vec![x as f64 / self.half_range as f64]
    }

    pub fn start<R: Rng>(&self, rng: &mut R) -> i64 {
        rng.random_range(-self.half_range..=self.half_range)
    }

    /// Returns the next position and the progress reward.
    pub fn step(&self, x: i64, action: usize) -> (i64, f64) {
        let dx = match Action::try_from(action) {
            Ok(Action::PosX) => 1,
            Ok(Action::NegX) => -1,
            _ => 0,
        };
        let next = (x + dx).clamp(-self.half_range, self.half_range);
        (next, (x.abs() - next.abs()) as f64)
    }

    pub fn policy_spec(&self, hidden: &[usize]) -> PolicySpec {
        PolicySpec {
            obs_dim: 1,
            n_targets: 1,
            n_coeffs: 0,
            n_agents: 1,
            n_actions: NUM_ACTIONS,
            residual_dim: 1,
            hidden: hidden.to_vec(),
            architecture: Architecture::Plain,
            actor_sees_second_order: false,
            global_dim: None,
        }
    }

    /// Fraction of the optimal return collected by the stochastic policy over
    /// `episodes` episodes.
    pub fn evaluate(&self, params: &PolicyParams, episodes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut got, mut best) = (0.0, 0.0);
        for _ in 0..episodes {
            let mut x = self.start(&mut rng);
            best += x.abs() as f64;
            for _ in 0..self.horizon {
                let out = params.forward_one(&self.observe(x), None)?;
                let (a, _) = sample_action(&out.action_logits, &mut rng);
                let (next, r) = self.step(x, a);
                got += r;
                x = next;
            }
        }
        Ok(if best > 0.0 { got / best } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineTaskReport {
    pub env_steps: usize,
    /// `(env_steps, mean episode return)` after each update.
    pub curve: Vec<(usize, f64)>,
}

/// Plain PPO on the line task: no belief head, residual, variational model
/// or intrinsic reward.
pub fn train_line_task(task: &LineTask, cfg: &TrainConfig, hidden: &[usize]) -> Result<(PolicyParams, LineTaskReport)> {
    cfg.validate()?;
    let params = PolicyParams::new(task.policy_spec(hidden), derive_seed(cfg.seed, 1))?;
    let mut slot = PopulationSlot::new(Role::Good, params, PopulationSetup::baseline(), &[], cfg, 0);
    slot.frozen = false;
    let mut env_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5));
    let mut xs: Vec<(i64, usize)> = (0..cfg.n_envs).map(|_| (task.start(&mut env_rng), 0)).collect();
    let mut returns = vec![0.0; cfg.n_envs];
    let mut env_steps = 0;
    let mut update = 0;
    let mut curve = Vec::new();
    while env_steps < cfg.total_steps {
        let mut buffer = RolloutBuffer {
            streams: vec![Stream::default(); cfg.n_envs],
        };
        let mut finished = Vec::new();
        let steps = cfg.rollout_len.min((cfg.total_steps - env_steps).div_ceil(cfg.n_envs));
        for _ in 0..steps {
            for (e, (x, t)) in xs.iter_mut().enumerate() {
                let obs = task.observe(*x);
                let out = slot.params.forward_one(&obs, None)?;
                let (a, lp) = sample_action(&out.action_logits, &mut rng);
                let (next, r) = task.step(*x, a);
                *t += 1;
                let done = *t >= task.horizon;
                returns[e] += r;
                buffer.streams[e].samples.push(Sample {
                    obs,
                    global: None,
                    action: a,
                    log_prob: lp,
                    value: out.value,
                    reward_ext: r,
                    reward_tom: 0.0,
                    reward: r,
                    truth: vec![0.0],
                    own_belief: Vec::new(),
                    beliefs_all: vec![0.0],
                    self_index: 0,
                    done,
                    advantage: 0.0,
                    ret: 0.0,
                });
                if done {
                    finished.push(returns[e]);
                    returns[e] = 0.0;
                    *x = task.start(&mut env_rng);
                    *t = 0;
                } else {
                    *x = next;
                }
            }
        }
        for (e, (x, _)) in xs.iter().enumerate() {
            buffer.streams[e].bootstrap_value = slot.params.forward_one(&task.observe(*x), None)?.value;
        }
        env_steps += steps * cfg.n_envs;
        compute_gae(&mut buffer, cfg.discount, cfg.gae_lambda)?;
        update_population(&mut slot, &buffer, cfg, update, &mut rng)?;
        update += 1;
        if !finished.is_empty() {
            curve.push((env_steps, finished.iter().sum::<f64>() / finished.len() as f64));
        }
    }
    Ok((slot.params, LineTaskReport { env_steps, curve }))
}
