//! Joint rollout collection for both populations.
//!
//! Every agent acts from its own observation through its population's
//! network. Ground-truth labels and all agents' belief outputs are recorded
//! alongside, which is the centralized part of training.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{ground_truth_beliefs, Action, Observation, ParticleWorld, WorldState};
use crate::error::Result;
use crate::intrinsic::combined_reward;
use crate::policy::{log_softmax, second_order_loss_flat, BatchOutput, PolicyParams};
use crate::trainer::buffer::{RolloutBuffer, Sample, Stream};
use crate::trainer::PopulationSetup;

/// One environment instance with its episode bookkeeping.
#[derive(Debug, Clone)]
pub struct EnvRunner {
    world: ParticleWorld,
    state: WorldState,
    obs: Vec<Observation>,
    episode_seeds: ChaCha8Rng,
    return_good: f64,
    return_adv: f64,
}

impl EnvRunner {
    pub fn new(world: ParticleWorld, seed: u64) -> Self {
        let mut episode_seeds = ChaCha8Rng::seed_from_u64(seed);
        let (state, obs) = world.reset(episode_seeds.next_u64());
        Self {
            world,
            state,
            obs,
            episode_seeds,
            return_good: 0.0,
            return_adv: 0.0,
        }
    }

    pub fn world(&self) -> &ParticleWorld {
        &self.world
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    /// Extrinsic return of each finished episode (shared good reward summed).
    pub good_returns: Vec<f64>,
    pub adv_returns: Vec<f64>,
}

impl EpisodeStats {
    pub fn mean_good(&self) -> f64 {
        mean(&self.good_returns)
    }

    pub fn mean_adv(&self) -> f64 {
        mean(&self.adv_returns)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    pub good: RolloutBuffer,
    pub adv: RolloutBuffer,
    pub episodes: EpisodeStats,
}

fn rows(obs: &[Observation]) -> Array2<f64> {
    let width = obs[0].len();
    Array2::from_shape_fn((obs.len(), width), |(i, j)| obs[i][j])
}

fn global_rows(runner: &EnvRunner, params: &PolicyParams, n: usize) -> Option<Array2<f64>> {
    params.spec.global_dim.map(|_| {
        let g = runner.world.global_features(&runner.state);
        Array2::from_shape_fn((n, g.len()), |(_, j)| g[j])
    })
}

/// Samples an action index from softmax(`logits`) with one uniform draw.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut choice = logp.len() - 1;
    for (k, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            choice = k;
            break;
        }
    }
    (choice, logp[choice])
}

fn forward(params: &PolicyParams, obs: ArrayView2<'_, f64>, global: Option<&Array2<f64>>) -> Result<BatchOutput> {
    params.forward(obs, global.map(|g| g.view()))
}

/// Runs `steps` joint steps in every environment.
///
/// Streams are laid out environment-major: the good buffer holds
/// `n_envs * n_good` streams, the adversary buffer `n_envs`. Both parameter
/// sets are read-only here.
pub fn collect_rollouts(
    envs: &mut [EnvRunner],
    good: &PolicyParams,
    adv: &PolicyParams,
    good_setup: &PopulationSetup,
    adv_setup: &PopulationSetup,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutOutput> {
    let n_good = envs[0].world.config().n_good;
    let adv_index = n_good;
    let good_int = good_setup.effective_intrinsic();
    let adv_int = adv_setup.effective_intrinsic();
    let mut good_buf = RolloutBuffer {
        streams: vec![Stream::default(); envs.len() * n_good],
    };
    let mut adv_buf = RolloutBuffer {
        streams: vec![Stream::default(); envs.len()],
    };
    let mut episodes = EpisodeStats::default();
    let nt = good.spec.n_targets;
    let nb = good.spec.belief_dim();

    for _ in 0..steps {
        for (e, runner) in envs.iter_mut().enumerate() {
            let obs_good = rows(&runner.obs[..n_good]);
            let obs_adv = rows(&runner.obs[adv_index..]);
            let g_good = global_rows(runner, good, n_good);
            let g_adv = global_rows(runner, adv, 1);
            let out_good = forward(good, obs_good.view(), g_good.as_ref())?;
            let out_adv = forward(adv, obs_adv.view(), g_adv.as_ref())?;

            let mut beliefs_all = Vec::with_capacity(nb * (n_good + 1));
            for i in 0..n_good {
                beliefs_all.extend(out_good.belief_row(i));
            }
            beliefs_all.extend(out_adv.belief_row(0));
            let truth = ground_truth_beliefs(&runner.state).to_vec();

            let mut actions = Vec::with_capacity(n_good + 1);
            let mut log_probs = Vec::with_capacity(n_good + 1);
            for i in 0..n_good {
                let (a, lp) = sample_action(out_good.logits.row(i).as_slice().expect("contiguous"), rng);
                actions.push(a);
                log_probs.push(lp);
            }
            let (a, lp) = sample_action(out_adv.logits.row(0).as_slice().expect("contiguous"), rng);
            actions.push(a);
            log_probs.push(lp);

            let tom = |out: &BatchOutput, row: usize, me: usize, setup: &PopulationSetup| {
                if setup.first_order && setup.second_order {
                    let pred = out.second_order.row(row);
                    -second_order_loss_flat(pred.as_slice().expect("contiguous"), &beliefs_all, nt, nb, me)
                } else {
                    0.0
                }
            };

            let joint: Vec<Action> = actions.iter().map(|&a| Action::try_from(a)).collect::<Result<_>>()?;
            let result = runner.world.step(&runner.state, &joint)?;

            for i in 0..n_good {
                let r_tom = tom(&out_good, i, i, good_setup);
                let ext = result.rewards[i];
                good_buf.streams[e * n_good + i].samples.push(Sample {
                    obs: runner.obs[i].clone(),
                    global: g_good.as_ref().map(|g| g.row(i).to_vec()),
                    action: actions[i],
                    log_prob: log_probs[i],
                    value: out_good.value[i],
                    reward_ext: ext,
                    reward_tom: r_tom,
                    reward: combined_reward(ext, r_tom, &good_int),
                    truth: truth.clone(),
                    own_belief: out_good.belief_row(i),
                    beliefs_all: beliefs_all.clone(),
                    self_index: i,
                    done: result.done,
                    advantage: 0.0,
                    ret: 0.0,
                });
            }
            let r_tom = tom(&out_adv, 0, adv_index, adv_setup);
            let ext = result.rewards[adv_index];
            adv_buf.streams[e].samples.push(Sample {
                obs: runner.obs[adv_index].clone(),
                global: g_adv.as_ref().map(|g| g.row(0).to_vec()),
                action: actions[adv_index],
                log_prob: log_probs[adv_index],
                value: out_adv.value[0],
                reward_ext: ext,
                reward_tom: r_tom,
                reward: combined_reward(ext, r_tom, &adv_int),
                truth,
                own_belief: out_adv.belief_row(0),
                beliefs_all,
                self_index: adv_index,
                done: result.done,
                advantage: 0.0,
                ret: 0.0,
            });

            runner.return_good += result.rewards[0];
            runner.return_adv += ext;
            if result.done {
                episodes.good_returns.push(runner.return_good);
                episodes.adv_returns.push(runner.return_adv);
                runner.return_good = 0.0;
                runner.return_adv = 0.0;
                let (state, obs) = runner.world.reset(runner.episode_seeds.next_u64());
                runner.state = state;
                runner.obs = obs;
            } else {
                runner.state = result.next_state;
                runner.obs = result.observations;
            }
        }
    }

    for (e, runner) in envs.iter().enumerate() {
        let obs_good = rows(&runner.obs[..n_good]);
        let obs_adv = rows(&runner.obs[adv_index..]);
        let g_good = global_rows(runner, good, n_good);
        let g_adv = global_rows(runner, adv, 1);
        let v_good = forward(good, obs_good.view(), g_good.as_ref())?.value;
        let v_adv = forward(adv, obs_adv.view(), g_adv.as_ref())?.value;
        for i in 0..n_good {
            good_buf.streams[e * n_good + i].bootstrap_value = v_good[i];
        }
        adv_buf.streams[e].bootstrap_value = v_adv[0];
    }

    Ok(RolloutOutput {
        good: good_buf,
        adv: adv_buf,
        episodes,
    })
}
