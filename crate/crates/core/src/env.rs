//! Physical-deception particle world.
//!
//! `N` landmarks, `n_good` cooperating agents and one adversary move in a
//! square box. One landmark is secretly the target. Good agents share a reward
//! that grows when one of them is close to the target and the adversary is far
//! from it; the adversary is paid for finding the target and ends the episode
//! by touching any landmark.
//!
//! Agent indices `0..n_good` are the good agents, index `n_good` is the
//! adversary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Noop = 0,
    PosX = 1,
    NegX = 2,
    PosY = 3,
    NegY = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Noop, Action::PosX, Action::NegX, Action::PosY, Action::NegY];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn direction(self) -> Vec2 {
        match self {
            Action::Noop => [0.0, 0.0],
            Action::PosX => [1.0, 0.0],
            Action::NegX => [-1.0, 0.0],
            Action::PosY => [0.0, 1.0],
            Action::NegY => [0.0, -1.0],
        }
    }
}

impl TryFrom<usize> for Action {
    type Error = Error;

    fn try_from(id: usize) -> Result<Self> {
        Action::ALL.get(id).copied().ok_or(Error::InvalidAction(id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub n_landmarks: usize,
    pub n_good: usize,
    pub max_steps: usize,
    pub world_halfwidth: f64,
    pub capture_radius: f64,
    pub dt: f64,
    pub damping: f64,
    pub max_speed: f64,
    pub accel_good: f64,
    pub accel_adv: f64,
    /// Scale each good agent's distance by its coefficient inside the min.
    pub weighted_good_reward: bool,
    /// Inverted capture bonus: paid at a non-target landmark and charged at
    /// the target. Off by default.
    pub literal_adv_bonus_signs: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 2,
            n_good: 2,
            max_steps: 50,
            world_halfwidth: 1.0,
            capture_radius: 0.1,
            dt: 0.1,
            damping: 0.25,
            max_speed: 1.0,
            accel_good: 3.0,
            accel_adv: 4.0,
            weighted_good_reward: false,
            literal_adv_bonus_signs: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_landmarks < 2 {
            return bad("n_landmarks must be at least 2");
        }
        if self.n_good < 1 {
            return bad("n_good must be positive");
        }
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1");
        }
        for (name, v) in [
            ("world_halfwidth", self.world_halfwidth),
            ("capture_radius", self.capture_radius),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
            ("accel_good", self.accel_good),
            ("accel_adv", self.accel_adv),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive and finite"));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad("damping must lie in [0, 1)");
        }
        Ok(())
    }

    /// Good agents plus the adversary.
    pub fn n_agents(&self) -> usize {
        self.n_good + 1
    }

    pub fn adversary_index(&self) -> usize {
        self.n_good
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.n_landmarks + 2 * (self.n_agents() - 1) + 2
    }

    /// Width of the centralized-critic state vector, see [`ParticleWorld::global_features`].
    pub fn global_dim(&self) -> usize {
        4 * self.n_agents() + 3 * self.n_landmarks + self.n_good
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub landmark_pos: Vec<Vec2>,
    pub agent_pos: Vec<Vec2>,
    pub agent_vel: Vec<Vec2>,
    pub target_index: usize,
    /// Per-good-agent reward coefficients.
    pub eta: Vec<f64>,
    pub t: usize,
}

pub type Observation = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: WorldState,
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub capture_event: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBeliefs {
    pub target_onehot: Vec<f64>,
    pub coefficients: Vec<f64>,
}

impl GroundTruthBeliefs {
    /// `[target_onehot | coefficients]`, the layout belief heads predict.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.target_onehot.clone();
        v.extend_from_slice(&self.coefficients);
        v
    }
}

pub fn ground_truth_beliefs(state: &WorldState) -> GroundTruthBeliefs {
    let mut target_onehot = vec![0.0; state.landmark_pos.len()];
    target_onehot[state.target_index] = 1.0;
    GroundTruthBeliefs {
        target_onehot,
        coefficients: state.eta.clone(),
    }
}

pub fn distance(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone)]
pub struct ParticleWorld {
    config: EnvConfig,
}

impl ParticleWorld {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Samples a fresh episode. Everything is drawn from a generator seeded
    /// with `seed` alone, so equal seeds give bit-identical states.
    ///
    /// The adversary is redrawn while it starts inside a landmark's capture
    /// radius, otherwise the episode would already be over at `t = 0`.
    pub fn reset(&self, seed: u64) -> (WorldState, Vec<Observation>) {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = c.world_halfwidth;
        let point = |rng: &mut ChaCha8Rng| [rng.random_range(-w..=w), rng.random_range(-w..=w)];
        let landmark_pos: Vec<Vec2> = (0..c.n_landmarks).map(|_| point(&mut rng)).collect();
        let mut agent_pos: Vec<Vec2> = (0..c.n_agents()).map(|_| point(&mut rng)).collect();
        let adv = c.adversary_index();
        while landmark_pos
            .iter()
            .any(|&l| distance(agent_pos[adv], l) < c.capture_radius)
        {
            agent_pos[adv] = point(&mut rng);
        }
        let target_index = rng.random_range(0..c.n_landmarks);
        let eta = (0..c.n_good).map(|_| rng.random::<f64>()).collect();
        let state = WorldState {
            landmark_pos,
            agent_pos,
            agent_vel: vec![[0.0, 0.0]; c.n_agents()],
            target_index,
            eta,
            t: 0,
        };
        let obs = self.observe_all(&state);
        (state, obs)
    }

    pub fn captured_landmark(&self, state: &WorldState) -> Option<usize> {
        let adv = state.agent_pos[self.config.adversary_index()];
        state
            .landmark_pos
            .iter()
            .enumerate()
            .map(|(i, &l)| (i, distance(adv, l)))
            .filter(|&(_, d)| d < self.config.capture_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn is_terminal(&self, state: &WorldState) -> bool {
        state.t >= self.config.max_steps || self.captured_landmark(state).is_some()
    }

    pub fn step(&self, state: &WorldState, actions: &[Action]) -> Result<StepResult> {
        let c = &self.config;
        if actions.len() != c.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "joint action",
                expected: c.n_agents(),
                actual: actions.len(),
            });
        }
        if self.is_terminal(state) {
            return Err(Error::EpisodeFinished);
        }
        let mut next = state.clone();
        let w = c.world_halfwidth;
        for (i, action) in actions.iter().enumerate() {
            let accel = if i == c.adversary_index() {
                c.accel_adv
            } else {
                c.accel_good
            };
            let dir = action.direction();
            let vel = &mut next.agent_vel[i];
            for k in 0..2 {
                vel[k] = (1.0 - c.damping) * vel[k] + accel * dir[k] * c.dt;
            }
            let speed = vel[0].hypot(vel[1]);
            if speed > c.max_speed {
                let s = c.max_speed / speed;
                vel[0] *= s;
                vel[1] *= s;
            }
            let pos = &mut next.agent_pos[i];
            for k in 0..2 {
                pos[k] = (pos[k] + vel[k] * c.dt).clamp(-w, w);
            }
        }
        next.t += 1;

        let capture_event = self.captured_landmark(&next);
        let done = next.t >= c.max_steps || capture_event.is_some();
        let r_good = self.good_reward(&next);
        let r_adv = self.adv_reward(&next);
        let mut rewards = vec![r_good; c.n_good];
        rewards.push(r_adv);
        let observations = self.observe_all(&next);
        Ok(StepResult {
            next_state: next,
            observations,
            rewards,
            done,
            capture_event,
        })
    }

    /// Shared good-agent reward: minus the closest good agent's distance to
    /// the target, plus the adversary's distance to it.
    pub fn good_reward(&self, state: &WorldState) -> f64 {
        let target = state.landmark_pos[state.target_index];
        let closest = (0..self.config.n_good)
            .map(|i| {
                let d = distance(state.agent_pos[i], target);
                if self.config.weighted_good_reward {
                    state.eta[i] * d
                } else {
                    d
                }
            })
            .fold(f64::INFINITY, f64::min);
        let adv = state.agent_pos[self.config.adversary_index()];
        -closest + distance(adv, target)
    }

    /// Adversary reward: minus its distance to the target, plus a bonus of
    /// `1 - t/T` for touching the target (or minus that for touching another
    /// landmark).
    pub fn adv_reward(&self, state: &WorldState) -> f64 {
        let target = state.landmark_pos[state.target_index];
        let adv = state.agent_pos[self.config.adversary_index()];
        let mut r = -distance(adv, target);
        if let Some(hit) = self.captured_landmark(state) {
            let bonus = 1.0 - state.t as f64 / self.config.max_steps as f64;
            let at_target = hit == state.target_index;
            if at_target != self.config.literal_adv_bonus_signs {
                r += bonus;
            } else {
                r -= bonus;
            }
        }
        r
    }

    pub fn observe_all(&self, state: &WorldState) -> Vec<Observation> {
        (0..self.config.n_agents()).map(|i| self.observe(state, i)).collect()
    }

    /// Layout: own velocity, landmark offsets, other-agent offsets (in index
    /// order), then `[sum_j eta_j * d(x_j, target), eta_i]` for good agents or
    /// two zeros for the adversary.
    pub fn observe(&self, state: &WorldState, agent: usize) -> Observation {
        let c = &self.config;
        let own = state.agent_pos[agent];
        let mut obs = Vec::with_capacity(c.obs_dim());
        obs.extend_from_slice(&state.agent_vel[agent]);
        for l in &state.landmark_pos {
            obs.push(l[0] - own[0]);
            obs.push(l[1] - own[1]);
        }
        for (j, p) in state.agent_pos.iter().enumerate() {
            if j != agent {
                obs.push(p[0] - own[0]);
                obs.push(p[1] - own[1]);
            }
        }
        if agent == c.adversary_index() {
            obs.extend_from_slice(&[0.0, 0.0]);
        } else {
            let target = state.landmark_pos[state.target_index];
            let weighted: f64 = (0..c.n_good)
                .map(|j| state.eta[j] * distance(state.agent_pos[j], target))
                .sum();
            obs.push(weighted);
            obs.push(state.eta[agent]);
        }
        obs
    }

    /// Full state for a centralized critic: agent positions and velocities,
    /// landmark positions, target one-hot and coefficients.
    pub fn global_features(&self, state: &WorldState) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.config.global_dim());
        for p in &state.agent_pos {
            g.extend_from_slice(p);
        }
        for v in &state.agent_vel {
            g.extend_from_slice(v);
        }
        for l in &state.landmark_pos {
            g.extend_from_slice(l);
        }
        g.extend(ground_truth_beliefs(state).to_vec());
        g
    }
}
