//! Population slots, the per-update optimization step and the alternating
//! training loop.

use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::club::{PairBatch, VariationalModel};
use crate::env::ParticleWorld;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::policy::{Architecture, Head, Heads, PolicyParams};
use crate::trainer::buffer::{compute_gae, RolloutBuffer, Sample, TrainBatch};
use crate::trainer::loss::total_policy_loss;
use crate::trainer::rollout::{collect_rollouts, mean, EnvRunner};
use crate::trainer::{derive_seed, PopulationSetup, Role, RunConfig, TrainConfig};

/// One Adam instance per head; gradients are clipped head by head so that a
/// head with its own objective cannot rescale another head's step.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    adams: Vec<Adam>,
}

impl PolicyOptimizer {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        Self {
            adams: Head::ALL.iter().map(|&h| Adam::new(params.heads.get(h), lr)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &mut Heads, max_grad_norm: f64) {
        for (adam, &head) in self.adams.iter_mut().zip(Head::ALL.iter()) {
            let g = grads.get_mut(head);
            if max_grad_norm > 0.0 {
                clip_grad_norm(g, max_grad_norm);
            }
            adam.step(params.heads.get_mut(head), g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PopulationSlot {
    pub role: Role,
    pub params: PolicyParams,
    pub frozen: bool,
    pub setup: PopulationSetup,
    pub var_model: Option<VariationalModel>,
    optimizer: PolicyOptimizer,
}

impl PopulationSlot {
    pub fn new(
        role: Role,
        params: PolicyParams,
        setup: PopulationSetup,
        var_hidden: &[usize],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Self {
        let var_model = (params.spec.architecture == Architecture::Bottleneck).then(|| {
            let mut v = VariationalModel::new(params.spec.belief_dim(), params.spec.residual_dim, var_hidden, seed);
            v.max_grad_norm = cfg.max_grad_norm;
            v
        });
        let optimizer = PolicyOptimizer::new(&params, cfg.lr);
        Self {
            role,
            params,
            frozen: true,
            setup,
            var_model,
            optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub l_ppo: f64,
    pub l_belief: f64,
    pub l_residual: f64,
    pub l_q: f64,
    pub l_second_order: f64,
    pub steps: usize,
}

/// Fits the variational model on the current `(b, z)` of a minibatch.
fn variational_steps(
    var: &mut VariationalModel,
    params: &PolicyParams,
    batch: &TrainBatch,
    steps: usize,
    lr: f64,
) -> Result<f64> {
    let out = params.forward(batch.obs.view(), batch.global.as_ref().map(|g| g.view()))?;
    let beliefs =
        ndarray::concatenate(Axis(1), &[out.target_dist.view(), out.coeff_est.view()]).expect("row counts agree");
    let pairs = PairBatch::new(beliefs, out.residual)?;
    let mut last = 0.0;
    for _ in 0..steps {
        last = var.update(&pairs, lr)?;
    }
    Ok(last)
}

/// PPO epochs over `buffer` (advantages already filled) for one slot.
pub fn update_population(
    slot: &mut PopulationSlot,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    update_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let samples: Vec<&Sample> = buffer.samples().collect();
    let weights = slot.setup.weights(cfg);
    let var_steps = if update_index < cfg.club_warmup_updates {
        cfg.club_warmup_ratio
    } else {
        1
    };
    let mb_size = samples.len().div_ceil(cfg.minibatches).max(2);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb_size) {
            if chunk.len() < 2 {
                continue;
            }
            let picked: Vec<&Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let batch = TrainBatch::gather(&picked);
            if let Some(var) = slot.var_model.as_mut() {
                stats.l_q += variational_steps(var, &slot.params, &batch, var_steps, cfg.var_lr)?;
            }
            let (loss, mut grads) = total_policy_loss(&slot.params, slot.var_model.as_ref(), &batch, &weights)?;
            if let Some(index) = Head::ALL
                .iter()
                .flat_map(|&h| grads.get(h).params())
                .position(|g| !g.is_finite())
            {
                return Err(Error::NonFinite {
                    what: "policy gradient".into(),
                    index,
                });
            }
            slot.optimizer.step(&mut slot.params, &mut grads, cfg.max_grad_norm);
            stats.l_ppo += loss.ppo;
            stats.l_belief += loss.belief;
            stats.l_residual += loss.residual;
            stats.l_second_order += loss.second_order;
            stats.steps += 1;
        }
    }
    if stats.steps > 0 {
        let n = stats.steps as f64;
        stats.l_ppo /= n;
        stats.l_belief /= n;
        stats.l_residual /= n;
        stats.l_q /= n;
        stats.l_second_order /= n;
    }
    Ok(stats)
}

/// One line of the metrics stream, emitted after every policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub update_index: usize,
    /// Environment steps completed after this update's rollout.
    pub env_steps: usize,
    pub population: Role,
    pub mean_ep_reward_good: f64,
    pub mean_ep_reward_adv: f64,
    pub l_ppo: f64,
    pub l_belief: f64,
    pub l_residual: f64,
    pub l_q: f64,
    pub l_second_order: f64,
    pub r_tom_mean: f64,
}

impl MetricsRecord {
    pub const HEADER: &'static str = "update_index,env_steps,population,mean_ep_reward_good,mean_ep_reward_adv,L_ppo,L_belief,L_residual,L_q,L_2nd_order,r_tom_mean";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.update_index,
            self.env_steps,
            self.population.name(),
            self.mean_ep_reward_good,
            self.mean_ep_reward_adv,
            self.l_ppo,
            self.l_belief,
            self.l_residual,
            self.l_q,
            self.l_second_order,
            self.r_tom_mean
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub good: PopulationSlot,
    pub adv: PopulationSlot,
    pub metrics: Vec<MetricsRecord>,
}

fn write_checkpoints(dir: &Path, tag: &str, good: &PopulationSlot, adv: &PopulationSlot) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for slot in [good, adv] {
        let path = dir.join(format!("{}_{}.ckpt", slot.role.name(), tag));
        checkpoint::save(&path, &slot.params, slot.var_model.as_ref())?;
    }
    Ok(())
}

/// Trains both populations, alternating which one is optimized.
///
/// Rollouts never straddle a swap boundary, so each phase consumes exactly
/// `swap_interval` environment steps (the last phase may be shorter).
/// Checkpoints of both slots are written to `checkpoint_dir` at every swap
/// and at the end; a non-finite loss aborts the run after writing
/// `*_abort.ckpt`.
pub fn train_alternating(
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.train;
    let world = ParticleWorld::new(cfg.env.clone())?;
    let mut good = PopulationSlot::new(
        Role::Good,
        PolicyParams::new(cfg.policy_spec(Role::Good), derive_seed(tc.seed, 1))?,
        cfg.good,
        &cfg.policy.var_hidden,
        tc,
        derive_seed(tc.seed, 3),
    );
    let mut adv = PopulationSlot::new(
        Role::Adversary,
        PolicyParams::new(cfg.policy_spec(Role::Adversary), derive_seed(tc.seed, 2))?,
        cfg.adv,
        &cfg.policy.var_hidden,
        tc,
        derive_seed(tc.seed, 4),
    );
    let mut envs: Vec<EnvRunner> = (0..tc.n_envs)
        .map(|e| EnvRunner::new(world.clone(), derive_seed(tc.seed, 100 + e as u64)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, 5));

    let mut metrics = Vec::new();
    let mut env_steps = 0usize;
    let mut update_index = 0usize;
    let mut active = Role::Good;
    good.frozen = false;
    while env_steps < tc.total_steps {
        let phase = if (env_steps / tc.swap_interval).is_multiple_of(2) {
            Role::Good
        } else {
            Role::Adversary
        };
        if phase != active {
            if let Some(dir) = checkpoint_dir {
                write_checkpoints(dir, &format!("swap{env_steps}"), &good, &adv)?;
            }
            active = phase;
            good.frozen = active != Role::Good;
            adv.frozen = active != Role::Adversary;
        }
        let next_boundary = (env_steps / tc.swap_interval + 1) * tc.swap_interval;
        let budget = next_boundary.min(tc.total_steps) - env_steps;
        let per_env = tc.rollout_len.min(budget.div_ceil(tc.n_envs));

        let mut rollout = collect_rollouts(
            &mut envs,
            &good.params,
            &adv.params,
            &good.setup,
            &adv.setup,
            per_env,
            &mut rng,
        )?;
        env_steps += per_env * tc.n_envs;

        let (slot, buffer) = match active {
            Role::Good => (&mut good, &mut rollout.good),
            Role::Adversary => (&mut adv, &mut rollout.adv),
        };
        compute_gae(buffer, tc.discount, tc.gae_lambda)?;
        let r_tom_mean = if slot.setup.first_order && slot.setup.second_order {
            mean(&buffer.samples().map(|s| s.reward_tom).collect::<Vec<_>>())
        } else {
            f64::NAN
        };
        let stats = match update_population(slot, buffer, tc, update_index, &mut rng) {
            Ok(s) => s,
            Err(e @ (Error::NonFinite { .. } | Error::EmptyBuffer)) => {
                let path = match checkpoint_dir {
                    Some(dir) => {
                        write_checkpoints(dir, "abort", &good, &adv)?;
                        Some(PathBuf::from(dir))
                    }
                    None => None,
                };
                return Err(Error::TrainingAborted {
                    reason: e.to_string(),
                    checkpoint: path,
                });
            }
            Err(e) => return Err(e),
        };
        let record = MetricsRecord {
            update_index,
            env_steps,
            population: active,
            mean_ep_reward_good: rollout.episodes.mean_good(),
            mean_ep_reward_adv: rollout.episodes.mean_adv(),
            l_ppo: stats.l_ppo,
            l_belief: stats.l_belief,
            l_residual: stats.l_residual,
            l_q: stats.l_q,
            l_second_order: stats.l_second_order,
            r_tom_mean,
        };
        observer(&record)?;
        metrics.push(record);
        update_index += 1;
    }
    if let Some(dir) = checkpoint_dir {
        write_checkpoints(dir, "final", &good, &adv)?;
    }
    Ok(TrainOutcome { good, adv, metrics })
}
