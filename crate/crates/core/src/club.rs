//! Variational conditional model `q(z | b)` and the contrastive log-ratio
//! upper bound on `I(B; Z)`.
//!
//! `q` is a diagonal Gaussian whose mean and log-variance come from a small
//! network of the belief. The bound is
//!
//! ```text
//! (1/M) sum_i log q(z_i | b_i)  -  (1/M^2) sum_i sum_j log q(z_j | b_i)
//! ```
//!
//! The double sum is evaluated in `O(M d)` from per-dimension sufficient
//! statistics of the residual batch; it is the exact full pairing, not a
//! shuffled subsample.

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Mlp, Tape};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Row-aligned samples `(b_i, z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub beliefs: Array2<f64>,
    pub residuals: Array2<f64>,
}

impl PairBatch {
    pub fn new(beliefs: Array2<f64>, residuals: Array2<f64>) -> Result<Self> {
        if beliefs.nrows() != residuals.nrows() {
            return Err(Error::DimensionMismatch {
                what: "pair batch rows",
                expected: beliefs.nrows(),
                actual: residuals.nrows(),
            });
        }
        if beliefs.nrows() < 2 {
            return Err(Error::InvalidConfig("a pair batch needs at least two rows".into()));
        }
        for (what, m) in [("belief", &beliefs), ("residual", &residuals)] {
            if let Some(index) = m.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("{what} batch entry"),
                    index,
                });
            }
        }
        Ok(Self { beliefs, residuals })
    }

    pub fn len(&self) -> usize {
        self.beliefs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct VariationalModel {
    net: Mlp,
    adam: Adam,
    belief_dim: usize,
    residual_dim: usize,
    pub max_grad_norm: f64,
}

struct Gaussian {
    mean: Array2<f64>,
    log_var: Array2<f64>,
    /// false where the raw log-variance was clamped
    live: Array2<bool>,
    tape: Tape,
}

impl VariationalModel {
    pub fn new(belief_dim: usize, residual_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![belief_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * residual_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1AB_C1AB_C1AB_C1AB);
        let net = Mlp::new(&sizes, 0.1, &mut rng);
        let adam = Adam::new(&net, 1e-3);
        Self {
            net,
            adam,
            belief_dim,
            residual_dim,
            max_grad_norm: 0.0,
        }
    }

    /// Wraps an existing network (e.g. one restored from a checkpoint) with
    /// fresh optimizer state.
    pub fn from_net(net: Mlp, belief_dim: usize, residual_dim: usize) -> Result<Self> {
        if net.input_dim() != belief_dim || net.output_dim() != 2 * residual_dim {
            return Err(Error::DimensionMismatch {
                what: "variational network",
                expected: 2 * residual_dim,
                actual: net.output_dim(),
            });
        }
        let adam = Adam::new(&net, 1e-3);
        Ok(Self {
            net,
            adam,
            belief_dim,
            residual_dim,
            max_grad_norm: 0.0,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn belief_dim(&self) -> usize {
        self.belief_dim
    }

    pub fn residual_dim(&self) -> usize {
        self.residual_dim
    }

    fn check(&self, b: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> Result<()> {
        if b.ncols() != self.belief_dim {
            return Err(Error::DimensionMismatch {
                what: "belief",
                expected: self.belief_dim,
                actual: b.ncols(),
            });
        }
        if z.ncols() != self.residual_dim {
            return Err(Error::DimensionMismatch {
                what: "residual",
                expected: self.residual_dim,
                actual: z.ncols(),
            });
        }
        if b.nrows() != z.nrows() {
            return Err(Error::DimensionMismatch {
                what: "pair rows",
                expected: b.nrows(),
                actual: z.nrows(),
            });
        }
        Ok(())
    }

    fn gaussian(&self, b: ArrayView2<'_, f64>) -> Gaussian {
        let (out, tape) = self.net.forward_tape(b);
        let d = self.residual_dim;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..]);
        let live = raw.mapv(|x| (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&x));
        let log_var = raw.mapv(|x| x.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Gaussian {
            mean,
            log_var,
            live,
            tape,
        }
    }

    /// `(mean, log_variance)` of `q(. | b)` for each row of `b`.
    pub fn mean_log_var(&self, b: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let g = self.gaussian(b);
        (g.mean, g.log_var)
    }

    /// `log q(z | b)` for one pair.
    pub fn cond_log_likelihood(&self, b: &[f64], z: &[f64]) -> Result<f64> {
        let bv = ArrayView2::from_shape((1, b.len()), b).expect("contiguous slice");
        let zv = ArrayView2::from_shape((1, z.len()), z).expect("contiguous slice");
        self.check(bv, zv)?;
        let g = self.gaussian(bv);
        Ok((0..self.residual_dim)
            .map(|d| gaussian_log_density(z[d], g.mean[[0, d]], g.log_var[[0, d]]))
            .sum())
    }

    pub fn club_estimate(&self, batch: &PairBatch) -> Result<f64> {
        self.club_estimate_with_grad(batch.beliefs.view(), batch.residuals.view())
            .map(|(v, _)| v)
    }

    /// The bound together with its gradient with respect to the residuals,
    /// holding `theta` and the beliefs fixed.
    pub fn club_estimate_with_grad(
        &self,
        b: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<(f64, Array2<f64>)> {
        self.check(b, z)?;
        let m = b.nrows();
        if m < 2 {
            return Err(Error::InvalidConfig("the bound needs at least two pairs".into()));
        }
        let g = self.gaussian(b);
        let mf = m as f64;
        let mut joint = 0.0;
        let mut marginal = 0.0;
        let mut grad = Array2::zeros((m, self.residual_dim));
        for d in 0..self.residual_dim {
            let zc = z.column(d);
            let z_mean = zc.sum() / mf;
            let ss: f64 = zc.iter().map(|&x| (x - z_mean) * (x - z_mean)).sum();
            let mut inv_var_sum = 0.0;
            let mut mean_over_var_sum = 0.0;
            for i in 0..m {
                let mu = g.mean[[i, d]];
                let lv = g.log_var[[i, d]];
                let inv_var = (-lv).exp();
                joint += gaussian_log_density(zc[i], mu, lv);
                // sum_j (z_j - mu_i)^2 = ss + M (z_mean - mu_i)^2
                let spread = ss + mf * (z_mean - mu) * (z_mean - mu);
                marginal += mf * (-HALF_LN_2PI - 0.5 * lv) - 0.5 * inv_var * spread;
                inv_var_sum += inv_var;
                mean_over_var_sum += mu * inv_var;
            }
            for k in 0..m {
                let inv_var = (-g.log_var[[k, d]]).exp();
                grad[[k, d]] =
                    -(zc[k] - g.mean[[k, d]]) * inv_var / mf + (zc[k] * inv_var_sum - mean_over_var_sum) / (mf * mf);
            }
        }
        Ok((joint / mf - marginal / (mf * mf), grad))
    }

    /// Negative mean log-likelihood `L_q` and its parameter gradient.
    pub fn nll_with_grad(&self, batch: &PairBatch) -> Result<(f64, Mlp)> {
        let (b, z) = (batch.beliefs.view(), batch.residuals.view());
        self.check(b, z)?;
        let m = b.nrows() as f64;
        let d = self.residual_dim;
        let g = self.gaussian(b);
        let mut loss = 0.0;
        let mut dout = Array2::zeros((b.nrows(), 2 * d));
        for i in 0..b.nrows() {
            for k in 0..d {
                let (mu, lv) = (g.mean[[i, k]], g.log_var[[i, k]]);
                let inv_var = (-lv).exp();
                let diff = z[[i, k]] - mu;
                loss -= gaussian_log_density(z[[i, k]], mu, lv);
                dout[[i, k]] = -diff * inv_var / m;
                if g.live[[i, k]] {
                    dout[[i, d + k]] = 0.5 * (1.0 - diff * diff * inv_var) / m;
                }
            }
        }
        let mut grads = self.net.zeros_like();
        self.net.backward(&g.tape, dout.view(), &mut grads, false);
        Ok((loss / m, grads))
    }

    /// One Adam step on `L_q`. Returns the loss before the step.
    pub fn update(&mut self, batch: &PairBatch, lr: f64) -> Result<f64> {
        let (loss, mut grads) = self.nll_with_grad(batch)?;
        if let Some(index) = grads.params().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("variational gradient (loss {loss})"),
                index,
            });
        }
        if self.max_grad_norm > 0.0 {
            clip_grad_norm(&mut grads, self.max_grad_norm);
        }
        self.adam.lr = lr;
        self.adam.step(&mut self.net, &grads);
        Ok(loss)
    }
}

pub fn gaussian_log_density(z: f64, mean: f64, log_var: f64) -> f64 {
    let diff = z - mean;
    -HALF_LN_2PI - 0.5 * log_var - 0.5 * diff * diff * (-log_var).exp()
}
