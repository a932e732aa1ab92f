//! Clipped policy-gradient loss and the combined policy objective.

use ndarray::{s, Array1, Array2, Axis};

use crate::club::VariationalModel;
use crate::error::{Error, Result};
use crate::policy::{cross_entropy, log_softmax, mean_squared_error, Architecture, BatchOutput, Heads, PolicyParams};
use crate::trainer::buffer::TrainBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Weight of the supervised second-order term.
    pub delta: f64,
    pub epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Surrogate, value and entropy terms combined.
    pub ppo: f64,
    /// Mean clipped surrogate objective (a quantity to maximize).
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub belief: f64,
    pub residual: f64,
    pub second_order: f64,
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

struct PpoTerms {
    breakdown: LossBreakdown,
    dlogits: Array2<f64>,
    dvalue: Array1<f64>,
}

fn normalized(adv: &Array1<f64>, on: bool) -> Array1<f64> {
    if !on || adv.len() < 2 {
        return adv.clone();
    }
    let mean = adv.mean().unwrap_or(0.0);
    let std = adv.std(0.0);
    adv.mapv(|a| (a - mean) / (std + 1e-8))
}

fn ppo_terms(out: &BatchOutput, batch: &TrainBatch, w: &LossWeights) -> Result<PpoTerms> {
    let m = batch.len();
    let mf = m as f64;
    let adv = normalized(&batch.advantages, w.normalize_advantages);
    let n_actions = out.logits.ncols();
    let mut dlogits = Array2::zeros((m, n_actions));
    let mut dvalue = Array1::zeros(m);
    let (mut surrogate, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let logits = out.logits.row(i).to_vec();
        let logp = log_softmax(&logits);
        let a = batch.actions[i];
        if a >= n_actions {
            return Err(Error::InvalidAction(a));
        }
        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                what: "probability ratio".into(),
                index: i,
            });
        }
        let unclipped = ratio * adv[i];
        let clipped = ratio.clamp(1.0 - w.epsilon, 1.0 + w.epsilon) * adv[i];
        surrogate += unclipped.min(clipped);
        // d(-surrogate)/d logp, zero on the clipped branch
        let dlogp = if unclipped <= clipped {
            -adv[i] * ratio / mf
        } else {
            0.0
        };

        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let h: f64 = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        entropy += h;
        for k in 0..n_actions {
            let onehot = if k == a { 1.0 } else { 0.0 };
            dlogits[[i, k]] = dlogp * (onehot - p[k]) + w.entropy_coef * p[k] * (logp[k] + h) / mf;
        }

        let err = out.value[i] - batch.returns[i];
        value_loss += 0.5 * err * err;
        dvalue[i] = w.value_coef * err / mf;
    }
    surrogate /= mf;
    value_loss /= mf;
    entropy /= mf;
    let ppo = -surrogate + w.value_coef * value_loss - w.entropy_coef * entropy;
    Ok(PpoTerms {
        breakdown: LossBreakdown {
            ppo,
            surrogate,
            value: value_loss,
            entropy,
            ..LossBreakdown::default()
        },
        dlogits,
        dvalue,
    })
}

/// PPO loss alone: negative clipped surrogate plus weighted value loss minus
/// weighted entropy.
pub fn ppo_clip_loss(params: &PolicyParams, batch: &TrainBatch, w: &LossWeights) -> Result<LossBreakdown> {
    let out = params.forward(batch.obs.view(), batch.global.as_ref().map(|g| g.view()))?;
    Ok(ppo_terms(&out, batch, w)?.breakdown)
}

/// Combined objective and its gradient for every head.
///
/// * actor and critic: `alpha * L_ppo`
/// * residual encoder: `alpha * L_ppo` through the actor's `z` input plus
///   `gamma * L_residual`; value errors do not reach it
/// * belief head: `beta * L_belief` only
/// * second-order head: `delta * L_second_order`
///
/// `L_residual` is the variational bound with `theta` held fixed and the
/// beliefs treated as constants.
pub fn total_policy_loss(
    params: &PolicyParams,
    var_model: Option<&VariationalModel>,
    batch: &TrainBatch,
    w: &LossWeights,
) -> Result<(LossBreakdown, Heads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let spec = &params.spec;
    let (out, tapes) = params.forward_tape(batch.obs.view(), batch.global.as_ref().map(|g| g.view()))?;
    let ppo = ppo_terms(&out, batch, w)?;
    let mut grads = params.heads.zeros_like();
    let mut loss = ppo.breakdown;

    let dlogits = ppo.dlogits * w.alpha;
    let dvalue = (ppo.dvalue * w.alpha).insert_axis(Axis(1));
    let bottleneck = spec.architecture == Architecture::Bottleneck;
    let d_actor_in = params
        .heads
        .actor
        .backward(&tapes.actor, dlogits.view(), &mut grads.actor, bottleneck);
    params
        .heads
        .critic
        .backward(&tapes.critic, dvalue.view(), &mut grads.critic, false);

    if bottleneck {
        let m = batch.len();
        let mf = m as f64;
        let (nt, nb, dz) = (spec.n_targets, spec.belief_dim(), spec.residual_dim);
        let nc = spec.n_coeffs;

        // only the z slice of the actor input is differentiable; the critic
        // reads (b, z) as constants
        let mut grad_z = d_actor_in.expect("requested").slice(s![.., nb..nb + dz]).to_owned();

        if let Some(var) = var_model {
            let beliefs = ndarray::concatenate(Axis(1), &[out.target_dist.view(), out.coeff_est.view()])
                .expect("row counts agree");
            let (bound, dz_bound) = var.club_estimate_with_grad(beliefs.view(), out.residual.view())?;
            loss.residual = bound;
            grad_z.scaled_add(w.gamma, &dz_bound);
        }
        params
            .heads
            .residual
            .backward(&tapes.residual, grad_z.view(), &mut grads.residual, false);

        // supervised belief loss
        let mut d_belief = Array2::zeros((m, nb));
        let mut belief_loss = 0.0;
        for i in 0..m {
            let truth = batch.truth.row(i);
            let p = out.target_dist.row(i);
            let t_sum: f64 = truth.slice(s![..nt]).sum();
            belief_loss += cross_entropy(p.as_slice().expect("contiguous"), &truth.slice(s![..nt]).to_vec());
            for k in 0..nt {
                d_belief[[i, k]] = w.beta * (p[k] * t_sum - truth[k]) / mf;
            }
            let c = out.coeff_est.row(i);
            belief_loss += mean_squared_error(c.as_slice().expect("contiguous"), &truth.slice(s![nt..]).to_vec());
            for k in 0..nc {
                let sgd = c[k];
                d_belief[[i, nt + k]] = w.beta * 2.0 * (sgd - truth[nt + k]) * sgd * (1.0 - sgd) / (nc as f64 * mf);
            }
        }
        loss.belief = belief_loss / mf;
        params
            .heads
            .belief
            .backward(&tapes.belief, d_belief.view(), &mut grads.belief, false);

        // supervised second-order loss; the b inside each row is a constant
        let k_agents = spec.n_agents;
        let mut d_offsets = Array2::zeros((m, spec.second_order_dim()));
        let mut so_loss = 0.0;
        if k_agents > 1 {
            let others = (k_agents - 1) as f64;
            for i in 0..m {
                let me = batch.self_index[i];
                let mut sample_loss = 0.0;
                for j in (0..k_agents).filter(|&j| j != me) {
                    let off = j * nb;
                    let pred = out.second_order.slice(s![i, off..off + nb]);
                    let actual = batch.beliefs_all.slice(s![i, off..off + nb]);
                    let a_sum: f64 = actual.slice(s![..nt]).sum();
                    sample_loss += cross_entropy(&pred.slice(s![..nt]).to_vec(), &actual.slice(s![..nt]).to_vec())
                        + mean_squared_error(&pred.slice(s![nt..]).to_vec(), &actual.slice(s![nt..]).to_vec());
                    for k in 0..nt {
                        d_offsets[[i, off + k]] = w.delta * (pred[k] * a_sum - actual[k]) / (others * mf);
                    }
                    for k in 0..nc {
                        d_offsets[[i, off + nt + k]] =
                            w.delta * 2.0 * (pred[nt + k] - actual[nt + k]) / (nc as f64 * others * mf);
                    }
                }
                so_loss += sample_loss / others;
            }
        }
        loss.second_order = so_loss / mf;
        params
            .heads
            .second_order
            .backward(&tapes.second_order, d_offsets.view(), &mut grads.second_order, false);
    }

    loss.total = w.alpha * loss.ppo + w.beta * loss.belief + w.gamma * loss.residual + w.delta * loss.second_order;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite {
            what: "policy loss".into(),
            index: 0,
        });
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
    }
}
