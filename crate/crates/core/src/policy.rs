//! Actor-critic policy with a supervised belief bottleneck.
//!
//! Five small networks read the same local observation:
//!
//! * belief head: target-landmark logits and coefficient logits,
//! * residual encoder `z = r(x)`,
//! * second-order head `f(x)`, one offset row per agent,
//! * actor and critic, both fed `[b | z]`.
//!
//! The belief `b` reaches the actor, the critic and the second-order rows only
//! as a constant: no loss other than the supervised belief loss ever sends a
//! gradient into the belief head. [`Architecture::Plain`] bypasses the
//! bottleneck and feeds the observation straight to actor and critic.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Bottleneck,
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub n_targets: usize,
    pub n_coeffs: usize,
    /// Rows of the second-order matrix (all agents, self included).
    pub n_agents: usize,
    pub n_actions: usize,
    pub residual_dim: usize,
    pub hidden: Vec<usize>,
    pub architecture: Architecture,
    /// Append the flattened (blocked) second-order matrix to the actor input.
    pub actor_sees_second_order: bool,
    /// Width of the extra state vector given to a centralized critic.
    pub global_dim: Option<usize>,
}

impl PolicySpec {
    pub fn belief_dim(&self) -> usize {
        self.n_targets + self.n_coeffs
    }

    pub fn second_order_dim(&self) -> usize {
        self.n_agents * self.belief_dim()
    }

    pub fn actor_input_dim(&self) -> usize {
        match self.architecture {
            Architecture::Plain => self.obs_dim,
            Architecture::Bottleneck => {
                let extra = if self.actor_sees_second_order {
                    self.second_order_dim()
                } else {
                    0
                };
                self.belief_dim() + self.residual_dim + extra
            }
        }
    }

    pub fn critic_input_dim(&self) -> usize {
        let base = match self.architecture {
            Architecture::Plain => self.obs_dim,
            Architecture::Bottleneck => self.belief_dim() + self.residual_dim,
        };
        base + self.global_dim.unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.n_actions == 0 || self.n_targets < 1 || self.n_agents < 1 {
            return Err(Error::InvalidConfig("policy dimensions must be positive".into()));
        }
        if self.residual_dim == 0 {
            return Err(Error::InvalidConfig("residual_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Belief,
    Residual,
    SecondOrder,
    Actor,
    Critic,
}

impl Head {
    pub const ALL: [Head; 5] = [
        Head::Belief,
        Head::Residual,
        Head::SecondOrder,
        Head::Actor,
        Head::Critic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Head::Belief => "belief",
            Head::Residual => "residual",
            Head::SecondOrder => "second_order",
            Head::Actor => "actor",
            Head::Critic => "critic",
        }
    }

    pub fn from_name(name: &str) -> Option<Head> {
        Head::ALL.into_iter().find(|h| h.name() == name)
    }
}

/// One network per head. Used both for parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub belief: Mlp,
    pub residual: Mlp,
    pub second_order: Mlp,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Heads {
    pub fn get(&self, head: Head) -> &Mlp {
        match head {
            Head::Belief => &self.belief,
            Head::Residual => &self.residual,
            Head::SecondOrder => &self.second_order,
            Head::Actor => &self.actor,
            Head::Critic => &self.critic,
        }
    }

    pub fn get_mut(&mut self, head: Head) -> &mut Mlp {
        match head {
            Head::Belief => &mut self.belief,
            Head::Residual => &mut self.residual,
            Head::SecondOrder => &mut self.second_order,
            Head::Actor => &mut self.actor,
            Head::Critic => &mut self.critic,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            belief: self.belief.zeros_like(),
            residual: self.residual.zeros_like(),
            second_order: self.second_order.zeros_like(),
            actor: self.actor.zeros_like(),
            critic: self.critic.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub spec: PolicySpec,
    pub heads: Heads,
}

fn head_seed(seed: u64, head: Head) -> u64 {
    // splitmix64 finalizer over (seed, head) so heads draw from unrelated streams
    let mut x = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(head as u64 + 1));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl PolicyParams {
    /// Each head is initialised from its own generator derived from `seed`,
    /// so enabling or disabling one head never perturbs the others.
    pub fn new(spec: PolicySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(&spec.hidden);
            v.push(output);
            v
        };
        let build = |head: Head, input: usize, output: usize, scale: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(head_seed(seed, head));
            Mlp::new(&sizes(input, output), scale, &mut rng)
        };
        let heads = Heads {
            belief: build(Head::Belief, spec.obs_dim, spec.belief_dim(), 1.0),
            residual: build(Head::Residual, spec.obs_dim, spec.residual_dim, 1.0),
            second_order: build(Head::SecondOrder, spec.obs_dim, spec.second_order_dim(), 0.1),
            actor: build(Head::Actor, spec.actor_input_dim(), spec.n_actions, 0.01),
            critic: build(Head::Critic, spec.critic_input_dim(), 1, 1.0),
        };
        Ok(Self { spec, heads })
    }

    pub fn all_finite(&self) -> bool {
        Head::ALL.iter().all(|&h| self.heads.get(h).all_finite())
    }

    fn check_obs(&self, obs: ArrayView2<'_, f64>) -> Result<()> {
        if obs.ncols() != self.spec.obs_dim {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.spec.obs_dim,
                actual: obs.ncols(),
            });
        }
        Ok(())
    }

    fn check_global(&self, global: Option<ArrayView2<'_, f64>>, rows: usize) -> Result<()> {
        match (self.spec.global_dim, global) {
            (None, _) => Ok(()),
            (Some(d), Some(g)) if g.ncols() == d && g.nrows() == rows => Ok(()),
            (Some(d), Some(g)) => Err(Error::DimensionMismatch {
                what: "global state",
                expected: d,
                actual: g.ncols(),
            }),
            (Some(d), None) => Err(Error::DimensionMismatch {
                what: "global state",
                expected: d,
                actual: 0,
            }),
        }
    }

    /// Batched forward pass over all heads.
    pub fn forward(&self, obs: ArrayView2<'_, f64>, global: Option<ArrayView2<'_, f64>>) -> Result<BatchOutput> {
        self.forward_tape(obs, global).map(|(out, _)| out)
    }

    pub fn forward_tape(
        &self,
        obs: ArrayView2<'_, f64>,
        global: Option<ArrayView2<'_, f64>>,
    ) -> Result<(BatchOutput, Tapes)> {
        self.check_obs(obs)?;
        self.check_global(global, obs.nrows())?;
        let f = self.features(obs);
        let actor_in = self.actor_input(obs, &f);
        let critic_base = match self.spec.architecture {
            Architecture::Plain => obs.to_owned(),
            Architecture::Bottleneck => {
                ndarray::concatenate(Axis(1), &[f.target_dist.view(), f.coeff_est.view(), f.residual.view()])
                    .expect("row counts agree")
            }
        };
        let critic_in = match global {
            Some(g) => ndarray::concatenate(Axis(1), &[critic_base.view(), g]).expect("row counts agree"),
            None => critic_base,
        };
        let (logits, actor_tape) = self.heads.actor.forward_tape(actor_in.view());
        let (value, critic_tape) = self.heads.critic.forward_tape(critic_in.view());

        let out = BatchOutput {
            belief_logits: f.belief_logits,
            target_dist: f.target_dist,
            coeff_est: f.coeff_est,
            residual: f.residual,
            second_order: f.second_order,
            logits,
            value: value.column(0).to_owned(),
        };
        let tapes = Tapes {
            belief: f.belief_tape,
            residual: f.residual_tape,
            second_order: f.second_order_tape,
            actor: actor_tape,
            critic: critic_tape,
        };
        Ok((out, tapes))
    }

    fn features(&self, obs: ArrayView2<'_, f64>) -> Features {
        let spec = &self.spec;
        let (nt, nb) = (spec.n_targets, spec.belief_dim());
        let (belief_logits, belief_tape) = self.heads.belief.forward_tape(obs);
        let target_dist = softmax_rows(belief_logits.slice(s![.., ..nt]));
        let coeff_est = belief_logits.slice(s![.., nt..]).mapv(sigmoid);
        let (residual, residual_tape) = self.heads.residual.forward_tape(obs);
        let (offsets, second_order_tape) = self.heads.second_order.forward_tape(obs);

        // target block: offset applied to the (constant) belief logits, then
        // renormalised; coefficient block: offset added to the estimate
        let m = obs.nrows();
        let mut second_order = Array2::zeros((m, spec.second_order_dim()));
        let mut logits = vec![0.0; nt];
        for i in 0..m {
            for k in 0..spec.n_agents {
                let off = k * nb;
                for t in 0..nt {
                    logits[t] = belief_logits[[i, t]] + offsets[[i, off + t]];
                }
                softmax_in_place(&mut logits);
                for t in 0..nt {
                    second_order[[i, off + t]] = logits[t];
                }
                for c in 0..spec.n_coeffs {
                    second_order[[i, off + nt + c]] = coeff_est[[i, c]] + offsets[[i, off + nt + c]];
                }
            }
        }
        Features {
            belief_logits,
            target_dist,
            coeff_est,
            residual,
            second_order,
            belief_tape,
            residual_tape,
            second_order_tape,
        }
    }

    fn actor_input(&self, obs: ArrayView2<'_, f64>, f: &Features) -> Array2<f64> {
        match self.spec.architecture {
            Architecture::Plain => obs.to_owned(),
            Architecture::Bottleneck => {
                let mut parts = vec![f.target_dist.view(), f.coeff_est.view(), f.residual.view()];
                if self.spec.actor_sees_second_order {
                    parts.push(f.second_order.view());
                }
                ndarray::concatenate(Axis(1), &parts).expect("row counts agree")
            }
        }
    }

    /// Action logits for decentralized execution: only the local observation is
    /// read, and the critic is never evaluated.
    pub fn action_logits(&self, obs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_obs(obs)?;
        let actor_in = match self.spec.architecture {
            Architecture::Plain => obs.to_owned(),
            Architecture::Bottleneck => {
                let f = self.features(obs);
                self.actor_input(obs, &f)
            }
        };
        Ok(self.heads.actor.forward(actor_in.view()))
    }

    /// Single-observation convenience wrapper around [`PolicyParams::forward`].
    pub fn forward_one(&self, obs: &[f64], global: Option<&[f64]>) -> Result<PolicyOutput> {
        let x = ndarray::ArrayView2::from_shape((1, obs.len()), obs).expect("contiguous slice");
        let g = global.map(|g| ndarray::ArrayView2::from_shape((1, g.len()), g).expect("contiguous slice"));
        let out = self.forward(x, g)?;
        Ok(out.row(0, &self.spec))
    }
}

struct Features {
    belief_logits: Array2<f64>,
    target_dist: Array2<f64>,
    coeff_est: Array2<f64>,
    residual: Array2<f64>,
    second_order: Array2<f64>,
    belief_tape: Tape,
    residual_tape: Tape,
    second_order_tape: Tape,
}

/// Layer tapes for every head, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tapes {
    pub belief: Tape,
    pub residual: Tape,
    pub second_order: Tape,
    pub actor: Tape,
    pub critic: Tape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub belief_logits: Array2<f64>,
    pub target_dist: Array2<f64>,
    pub coeff_est: Array2<f64>,
    pub residual: Array2<f64>,
    /// `M x (K * belief_dim)`, agent-major rows of `[target | coeff]`.
    pub second_order: Array2<f64>,
    pub logits: Array2<f64>,
    pub value: Array1<f64>,
}

impl BatchOutput {
    /// Row `i` of the concatenated belief `[target_dist | coeff_est]`.
    pub fn belief_row(&self, i: usize) -> Vec<f64> {
        self.target_dist
            .row(i)
            .iter()
            .chain(self.coeff_est.row(i).iter())
            .copied()
            .collect()
    }

    pub fn row(&self, i: usize, spec: &PolicySpec) -> PolicyOutput {
        let nb = spec.belief_dim();
        let rows = (0..spec.n_agents)
            .map(|k| self.second_order.slice(s![i, k * nb..(k + 1) * nb]).to_vec())
            .collect();
        PolicyOutput {
            belief: BeliefVector {
                target_dist: self.target_dist.row(i).to_vec(),
                coeff_est: self.coeff_est.row(i).to_vec(),
            },
            residual: self.residual.row(i).to_vec(),
            second_order: SecondOrderBeliefs {
                n_targets: spec.n_targets,
                rows,
            },
            action_logits: self.logits.row(i).to_vec(),
            value: self.value[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub target_dist: Vec<f64>,
    pub coeff_est: Vec<f64>,
}

impl BeliefVector {
    pub fn from_slice(v: &[f64], n_targets: usize) -> Self {
        Self {
            target_dist: v[..n_targets].to_vec(),
            coeff_est: v[n_targets..].to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.target_dist.clone();
        v.extend_from_slice(&self.coeff_est);
        v
    }
}

/// Row `i` is this agent's prediction of agent `i`'s belief, laid out as
/// `[target distribution | coefficient estimates]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderBeliefs {
    pub n_targets: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub belief: BeliefVector,
    pub residual: Vec<f64>,
    pub second_order: SecondOrderBeliefs,
    pub action_logits: Vec<f64>,
    pub value: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    out
}

fn check_simplex(p: &[f64], what: &'static str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::NotSimplex { what, sum });
    }
    Ok(())
}

/// `-sum_k truth_k * ln(pred_k)`
pub fn cross_entropy(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(f64::MIN_POSITIVE).ln())
        .sum()
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Cross entropy on the target block plus mean squared error on the
/// coefficient block.
pub fn belief_loss(belief: &BeliefVector, truth: &crate::env::GroundTruthBeliefs) -> Result<f64> {
    if belief.target_dist.len() != truth.target_onehot.len() {
        return Err(Error::DimensionMismatch {
            what: "belief target block",
            expected: truth.target_onehot.len(),
            actual: belief.target_dist.len(),
        });
    }
    if belief.coeff_est.len() != truth.coefficients.len() {
        return Err(Error::DimensionMismatch {
            what: "belief coefficient block",
            expected: truth.coefficients.len(),
            actual: belief.coeff_est.len(),
        });
    }
    check_simplex(&belief.target_dist, "belief target distribution")?;
    Ok(cross_entropy(&belief.target_dist, &truth.target_onehot)
        + mean_squared_error(&belief.coeff_est, &truth.coefficients))
}

/// Mean prediction loss over every agent except `self_index`.
pub fn second_order_loss(pred: &SecondOrderBeliefs, actuals: &[BeliefVector], self_index: usize) -> Result<f64> {
    if pred.rows.len() != actuals.len() {
        return Err(Error::DimensionMismatch {
            what: "second-order rows",
            expected: actuals.len(),
            actual: pred.rows.len(),
        });
    }
    if self_index >= actuals.len() {
        return Err(Error::DimensionMismatch {
            what: "self index",
            expected: actuals.len(),
            actual: self_index,
        });
    }
    let nt = pred.n_targets;
    let nb = actuals[0].target_dist.len() + actuals[0].coeff_est.len();
    let mut pred_flat = Vec::with_capacity(nb * actuals.len());
    let mut actual_flat = Vec::with_capacity(nb * actuals.len());
    for (row, actual) in pred.rows.iter().zip(actuals) {
        if row.len() != nb || actual.target_dist.len() != nt || actual.coeff_est.len() != nb - nt {
            return Err(Error::DimensionMismatch {
                what: "second-order row",
                expected: nb,
                actual: row.len(),
            });
        }
        pred_flat.extend_from_slice(row);
        actual_flat.extend(actual.to_vec());
    }
    Ok(second_order_loss_flat(&pred_flat, &actual_flat, nt, nb, self_index))
}

/// [`second_order_loss`] on agent-major flattened rows, without validation.
pub fn second_order_loss_flat(
    pred: &[f64],
    actuals: &[f64],
    n_targets: usize,
    belief_dim: usize,
    self_index: usize,
) -> f64 {
    let k = actuals.len() / belief_dim;
    if k < 2 {
        return 0.0;
    }
    let total: f64 = (0..k)
        .filter(|&i| i != self_index)
        .map(|i| {
            let p = &pred[i * belief_dim..(i + 1) * belief_dim];
            let a = &actuals[i * belief_dim..(i + 1) * belief_dim];
            cross_entropy(&p[..n_targets], &a[..n_targets]) + mean_squared_error(&p[n_targets..], &a[n_targets..])
        })
        .sum();
    total / (k - 1) as f64
}

pub fn action_log_prob(output: &PolicyOutput, action: usize) -> Result<f64> {
    if action >= output.action_logits.len() {
        return Err(Error::InvalidAction(action));
    }
    Ok(log_softmax(&output.action_logits)[action])
}
