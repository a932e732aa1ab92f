//! Centralized training with decentralized execution for two alternating
//! populations (good agents, adversary).
//!
//! Good agents share one parameter set; the adversary has its own. During a
//! phase one population is optimized while the other is frozen, and the roles
//! swap every `swap_interval` environment steps.

pub mod alternate;
pub mod buffer;
pub mod evaluate;
pub mod line_task;
pub mod loss;
pub mod rollout;

pub use alternate::{train_alternating, update_population, MetricsRecord, PopulationSlot, TrainOutcome};
pub use buffer::{compute_gae, RolloutBuffer, Sample, Stream, TrainBatch};
pub use evaluate::{evaluate_policy, EvalReport};
pub use loss::{clipped_surrogate, ppo_clip_loss, total_policy_loss, LossBreakdown, LossWeights};
pub use rollout::{collect_rollouts, EnvRunner, EpisodeStats, RolloutOutput};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::intrinsic::IntrinsicConfig;
use crate::policy::{Architecture, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Good,
    Adversary,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Good => "good",
            Role::Adversary => "adv",
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Good => Role::Adversary,
            Role::Adversary => Role::Good,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    /// `[b | z]` from the agent's own observation.
    Local,
    /// `[b | z]` plus the full world state.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    /// Steps per environment per update.
    pub rollout_len: usize,
    pub n_envs: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub lr: f64,
    pub var_lr: f64,
    pub max_grad_norm: f64,
    /// Updates at the start of training that take `club_warmup_ratio`
    /// variational steps per policy step instead of one.
    pub club_warmup_updates: usize,
    pub club_warmup_ratio: usize,
    pub swap_interval: usize,
    pub total_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
            delta: 0.5,
            epsilon: 0.2,
            gae_lambda: 0.95,
            discount: 0.99,
            rollout_len: 2048,
            n_envs: 1,
            minibatches: 4,
            epochs: 4,
            lr: 3e-4,
            var_lr: 1e-3,
            max_grad_norm: 0.5,
            club_warmup_updates: 10,
            club_warmup_ratio: 5,
            swap_interval: 100_000,
            total_steps: 200_000,
            value_coef: 0.5,
            entropy_coef: 0.01,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("lr", self.lr),
            ("var_lr", self.var_lr),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.alpha <= 0.0 {
            return bad("alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if self.rollout_len == 0 || self.n_envs == 0 || self.minibatches == 0 || self.epochs == 0 {
            return bad("rollout_len, n_envs, minibatches and epochs must be positive");
        }
        if self.swap_interval == 0 {
            return bad("swap_interval must be positive");
        }
        if self.club_warmup_ratio == 0 {
            return bad("club_warmup_ratio must be positive");
        }
        Ok(())
    }
}

/// Which belief machinery a population carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationSetup {
    /// Belief bottleneck with supervised belief head and disentangled residual.
    pub first_order: bool,
    /// Second-order head, trained and paid out as intrinsic reward.
    pub second_order: bool,
    pub intrinsic: IntrinsicConfig,
}

impl PopulationSetup {
    pub fn baseline() -> Self {
        Self {
            first_order: false,
            second_order: false,
            intrinsic: IntrinsicConfig::default(),
        }
    }

    pub fn first_order() -> Self {
        Self {
            first_order: true,
            ..Self::baseline()
        }
    }

    pub fn second_order(intrinsic: IntrinsicConfig) -> Self {
        Self {
            first_order: true,
            second_order: true,
            intrinsic,
        }
    }

    pub fn architecture(&self) -> Architecture {
        if self.first_order {
            Architecture::Bottleneck
        } else {
            Architecture::Plain
        }
    }

    /// Loss weights with the inactive terms zeroed.
    pub fn weights(&self, cfg: &TrainConfig) -> LossWeights {
        LossWeights {
            alpha: cfg.alpha,
            beta: if self.first_order { cfg.beta } else { 0.0 },
            gamma: if self.first_order { cfg.gamma } else { 0.0 },
            delta: if self.first_order && self.second_order {
                cfg.delta
            } else {
                0.0
            },
            epsilon: cfg.epsilon,
            value_coef: cfg.value_coef,
            entropy_coef: cfg.entropy_coef,
            normalize_advantages: cfg.normalize_advantages,
        }
    }

    /// The intrinsic reward actually paid: zero weight without a second-order head.
    pub fn effective_intrinsic(&self) -> IntrinsicConfig {
        if self.first_order && self.second_order {
            self.intrinsic
        } else {
            IntrinsicConfig {
                lambda: 0.0,
                ..self.intrinsic
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptions {
    pub hidden: Vec<usize>,
    pub residual_dim: usize,
    pub actor_sees_second_order: bool,
    pub critic: CriticInput,
    pub var_hidden: Vec<usize>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            residual_dim: 8,
            actor_sees_second_order: false,
            critic: CriticInput::Local,
            var_hidden: vec![64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub policy: PolicyOptions,
    pub good: PopulationSetup,
    pub adv: PopulationSetup,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.good.intrinsic.validate()?;
        self.adv.intrinsic.validate()?;
        if self.policy.residual_dim == 0 {
            return Err(Error::InvalidConfig("residual_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn setup(&self, role: Role) -> &PopulationSetup {
        match role {
            Role::Good => &self.good,
            Role::Adversary => &self.adv,
        }
    }

    pub fn policy_spec(&self, role: Role) -> PolicySpec {
        let env = &self.env;
        PolicySpec {
            obs_dim: env.obs_dim(),
            n_targets: env.n_landmarks,
            n_coeffs: env.n_good,
            n_agents: env.n_agents(),
            n_actions: crate::env::NUM_ACTIONS,
            residual_dim: self.policy.residual_dim,
            hidden: self.policy.hidden.clone(),
            architecture: self.setup(role).architecture(),
            actor_sees_second_order: self.policy.actor_sees_second_order,
            global_dim: match self.policy.critic {
                CriticInput::Local => None,
                CriticInput::Global => Some(env.global_dim()),
            },
        }
    }
}

/// Derives an independent 64-bit seed for a named stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut x = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
