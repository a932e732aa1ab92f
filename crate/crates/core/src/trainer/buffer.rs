//! Rollout storage and generalized advantage estimation.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// One agent-step as seen by the population that owns the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub global: Option<Vec<f64>>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward_ext: f64,
    /// Raw second-order prediction reward (zero when the population has no
    /// second-order head).
    pub reward_tom: f64,
    /// `reward_ext` combined with `reward_tom`; this is what GAE reads.
    pub reward: f64,
    /// Ground-truth belief labels `[target one-hot | coefficients]`.
    pub truth: Vec<f64>,
    pub own_belief: Vec<f64>,
    /// Every agent's first-order belief at this step, agent-major.
    pub beliefs_all: Vec<f64>,
    pub self_index: usize,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

/// Consecutive samples of one agent in one environment. `done` flags split
/// it into episodes; `bootstrap_value` is `V` of the state after the last
/// sample and is ignored if that sample is terminal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stream {
    pub samples: Vec<Sample>,
    pub bootstrap_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub streams: Vec<Stream>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.streams.iter().map(|s| s.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.streams.iter().flat_map(|s| s.samples.iter())
    }

    pub fn samples_mut(&mut self) -> impl Iterator<Item = &mut Sample> {
        self.streams.iter_mut().flat_map(|s| s.samples.iter_mut())
    }
}

/// Fills `advantage` and `ret` of every sample with GAE(`discount`, `lambda`).
/// A done flag zeroes both the bootstrap and the recursion across it.
pub fn compute_gae(buffer: &mut RolloutBuffer, discount: f64, lambda: f64) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    for stream in &mut buffer.streams {
        let mut next_value = stream.bootstrap_value;
        let mut next_adv = 0.0;
        for s in stream.samples.iter_mut().rev() {
            let live = if s.done { 0.0 } else { 1.0 };
            let delta = s.reward + discount * live * next_value - s.value;
            next_adv = delta + discount * lambda * live * next_adv;
            s.advantage = next_adv;
            s.ret = next_adv + s.value;
            next_value = s.value;
        }
    }
    Ok(())
}

/// Column-stacked minibatch for the loss functions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub obs: Array2<f64>,
    pub global: Option<Array2<f64>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
    pub truth: Array2<f64>,
    pub beliefs_all: Array2<f64>,
    pub self_index: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn gather(samples: &[&Sample]) -> Self {
        let m = samples.len();
        let first = samples[0];
        let stack = |width: usize, get: &dyn Fn(&Sample) -> &[f64]| {
            let mut a = Array2::zeros((m, width));
            for (i, s) in samples.iter().enumerate() {
                a.row_mut(i).assign(&ndarray::ArrayView1::from(get(s)));
            }
            a
        };
        let obs = stack(first.obs.len(), &|s| &s.obs);
        let global = first
            .global
            .as_ref()
            .map(|g| stack(g.len(), &|s| s.global.as_deref().unwrap_or(&[])));
        Self {
            obs,
            global,
            actions: samples.iter().map(|s| s.action).collect(),
            old_log_probs: samples.iter().map(|s| s.log_prob).collect(),
            advantages: samples.iter().map(|s| s.advantage).collect(),
            returns: samples.iter().map(|s| s.ret).collect(),
            truth: stack(first.truth.len(), &|s| &s.truth),
            beliefs_all: stack(first.beliefs_all.len(), &|s| &s.beliefs_all),
            self_index: samples.iter().map(|s| s.self_index).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample(reward: f64, value: f64, done: bool) -> Sample {
        Sample {
            obs: vec![0.0],
            global: None,
            action: 0,
            log_prob: 0.0,
            value,
            reward_ext: reward,
            reward_tom: 0.0,
            reward,
            truth: vec![],
            own_belief: vec![],
            beliefs_all: vec![],
            self_index: 0,
            done,
            advantage: 0.0,
            ret: 0.0,
        }
    }

    fn random_stream(rng: &mut ChaCha8Rng, len: usize, p_done: f64) -> Stream {
        Stream {
            samples: (0..len)
                .map(|_| {
                    sample(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random::<f64>() < p_done,
                    )
                })
                .collect(),
            bootstrap_value: rng.random_range(-1.0..1.0),
        }
    }

    #[test]
    fn empty_buffer_is_an_error() {
        assert!(matches!(
            compute_gae(&mut RolloutBuffer::default(), 0.99, 0.95),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = RolloutBuffer {
            streams: vec![random_stream(&mut rng, 30, 0.1)],
        };
        compute_gae(&mut buf, 0.9, 0.0).unwrap();
        let s = &buf.streams[0];
        for t in 0..s.samples.len() {
            let cur = &s.samples[t];
            let next_v = if t + 1 < s.samples.len() {
                s.samples[t + 1].value
            } else {
                s.bootstrap_value
            };
            let live = if cur.done { 0.0 } else { 1.0 };
            let td = cur.reward + 0.9 * live * next_v - cur.value;
            assert_eq!(cur.advantage, td);
        }
    }

    #[test]
    fn done_flag_blocks_bootstrap() {
        let mut buf = RolloutBuffer {
            streams: vec![Stream {
                samples: vec![sample(1.0, 0.5, true), sample(2.0, 100.0, false)],
                bootstrap_value: 0.0,
            }],
        };
        compute_gae(&mut buf, 0.99, 0.95).unwrap();
        assert_eq!(buf.streams[0].samples[0].advantage, 1.0 - 0.5);
    }
}
