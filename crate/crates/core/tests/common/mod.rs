#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tomrl::club::VariationalModel;
use tomrl::nn::Mlp;
use tomrl::policy::{log_softmax, Architecture, Head, PolicyParams, PolicySpec};
use tomrl::trainer::{LossWeights, TrainBatch};

pub fn spec(architecture: Architecture, global_dim: Option<usize>, actor_sees_second_order: bool) -> PolicySpec {
    PolicySpec {
        obs_dim: 12,
        n_targets: 2,
        n_coeffs: 2,
        n_agents: 3,
        n_actions: 5,
        residual_dim: 4,
        hidden: vec![8, 8],
        architecture,
        actor_sees_second_order,
        global_dim,
    }
}

pub fn weights() -> LossWeights {
    LossWeights {
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.1,
        delta: 0.5,
        epsilon: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
        normalize_advantages: true,
    }
}

fn random_belief(rng: &mut ChaCha8Rng, n_targets: usize, n_coeffs: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n_targets).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let mut b: Vec<f64> = raw.iter().map(|r| r / sum).collect();
    b.extend((0..n_coeffs).map(|_| rng.random::<f64>()));
    b
}

/// A batch whose old log-probabilities sit near the current policy's, so
/// both clip branches occur.
pub fn random_batch(params: &PolicyParams, m: usize, rng: &mut ChaCha8Rng) -> TrainBatch {
    let s = &params.spec;
    let obs = Array2::from_shape_fn((m, s.obs_dim), |_| rng.random_range(-1.0..1.0));
    let global = s
        .global_dim
        .map(|d| Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0)));
    let out = params.forward(obs.view(), global.as_ref().map(|g| g.view())).unwrap();
    let actions: Vec<usize> = (0..m).map(|_| rng.random_range(0..s.n_actions)).collect();
    let old_log_probs: Array1<f64> = (0..m)
        .map(|i| {
            let lp = log_softmax(&out.logits.row(i).to_vec());
            lp[actions[i]] + rng.random_range(-0.4..0.4)
        })
        .collect();
    let mut truth = Array2::zeros((m, s.belief_dim()));
    for i in 0..m {
        truth[[i, rng.random_range(0..s.n_targets)]] = 1.0;
        for k in 0..s.n_coeffs {
            truth[[i, s.n_targets + k]] = rng.random::<f64>();
        }
    }
    let mut beliefs_all = Array2::zeros((m, s.n_agents * s.belief_dim()));
    for i in 0..m {
        for j in 0..s.n_agents {
            let b = random_belief(rng, s.n_targets, s.n_coeffs);
            for (k, v) in b.into_iter().enumerate() {
                beliefs_all[[i, j * s.belief_dim() + k]] = v;
            }
        }
    }
    TrainBatch {
        obs,
        global,
        actions,
        old_log_probs,
        advantages: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        truth,
        beliefs_all,
        self_index: (0..m).map(|_| rng.random_range(0..s.n_agents)).collect(),
    }
}

pub fn var_model(params: &PolicyParams, seed: u64) -> VariationalModel {
    VariationalModel::new(params.spec.belief_dim(), params.spec.residual_dim, &[8], seed)
}

fn nth_param(net: &mut Mlp, idx: usize) -> &mut f64 {
    net.params_mut().nth(idx).expect("index in range")
}

/// Relative error `|a - fd| / max(|a|, |fd|)` between the analytic gradient
/// and central differences, taken as vectors over `n_probe` random
/// coordinates of `head`.
pub fn fd_relative_error(
    params: &PolicyParams,
    head: Head,
    analytic: &Mlp,
    loss: &dyn Fn(&PolicyParams) -> f64,
    n_probe: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let h = 1e-6;
    let n = params.heads.get(head).num_params();
    let analytic: Vec<f64> = analytic.params().copied().collect();
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for _ in 0..n_probe.min(n) {
        let idx = rng.random_range(0..n);
        let mut p = params.clone();
        *nth_param(p.heads.get_mut(head), idx) += h;
        let up = loss(&p);
        *nth_param(p.heads.get_mut(head), idx) -= 2.0 * h;
        let down = loss(&p);
        let fd = (up - down) / (2.0 * h);
        diff += (analytic[idx] - fd).powi(2);
        na += analytic[idx].powi(2);
        nf += fd * fd;
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
}
