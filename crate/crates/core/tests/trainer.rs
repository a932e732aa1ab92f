use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tomrl::env::{EnvConfig, ParticleWorld};
use tomrl::intrinsic::IntrinsicConfig;
use tomrl::policy::{log_softmax, PolicyParams};
use tomrl::trainer::{
    collect_rollouts, derive_seed, evaluate_policy, train_alternating, EnvRunner, PolicyOptions, PopulationSetup, Role,
    RunConfig, TrainConfig,
};

fn small_run(good: PopulationSetup, adv: PopulationSetup) -> RunConfig {
    RunConfig {
        env: EnvConfig::default(),
        train: TrainConfig {
            rollout_len: 128,
            total_steps: 512,
            swap_interval: 256,
            minibatches: 2,
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        },
        policy: PolicyOptions {
            hidden: vec![16, 16],
            var_hidden: vec![16],
            ..PolicyOptions::default()
        },
        good,
        adv,
    }
}

fn rollout(cfg: &RunConfig, n_envs: usize, steps: usize) -> tomrl::trainer::RolloutOutput {
    let world = ParticleWorld::new(cfg.env.clone()).unwrap();
    let mut envs: Vec<EnvRunner> = (0..n_envs)
        .map(|e| EnvRunner::new(world.clone(), 10 + e as u64))
        .collect();
    let good = PolicyParams::new(cfg.policy_spec(Role::Good), 1).unwrap();
    let adv = PolicyParams::new(cfg.policy_spec(Role::Adversary), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    collect_rollouts(&mut envs, &good, &adv, &cfg.good, &cfg.adv, steps, &mut rng).unwrap()
}

#[test]
fn rollouts_are_deterministic_and_sized() {
    let cfg = small_run(
        PopulationSetup::second_order(IntrinsicConfig::default()),
        PopulationSetup::first_order(),
    );
    let a = rollout(&cfg, 3, 60);
    let b = rollout(&cfg, 3, 60);
    assert_eq!(a, b);
    assert_eq!(a.good.len(), 60 * 3 * cfg.env.n_good);
    assert_eq!(a.adv.len(), 60 * 3);
    assert!(!a.episodes.good_returns.is_empty());
}

#[test]
fn recorded_actions_depend_only_on_own_observation() {
    let cfg = small_run(
        PopulationSetup::second_order(IntrinsicConfig::default()),
        PopulationSetup::first_order(),
    );
    let mut out = rollout(&cfg, 2, 80);
    let good = PolicyParams::new(cfg.policy_spec(Role::Good), 1).unwrap();
    let adv = PolicyParams::new(cfg.policy_spec(Role::Adversary), 2).unwrap();
    for (buf, params) in [(&mut out.good, &good), (&mut out.adv, &adv)] {
        for s in buf.samples_mut() {
            s.beliefs_all.iter_mut().for_each(|b| *b = 0.0);
            s.truth.iter_mut().for_each(|b| *b = 0.0);
            let obs = ndarray::Array2::from_shape_vec((1, s.obs.len()), s.obs.clone()).unwrap();
            let logits = params.action_logits(obs.view()).unwrap();
            let lp = log_softmax(&logits.row(0).to_vec());
            assert!((lp[s.action] - s.log_prob).abs() < 1e-12);
        }
    }
}

#[test]
fn intrinsic_reward_only_for_second_order_population() {
    let cfg = small_run(
        PopulationSetup::second_order(IntrinsicConfig::default()),
        PopulationSetup::first_order(),
    );
    let out = rollout(&cfg, 1, 100);
    assert!(out.good.samples().all(|s| s.reward_tom <= 0.0));
    assert!(out.good.samples().any(|s| s.reward_tom < 0.0));
    assert!(out
        .good
        .samples()
        .all(|s| s.reward != s.reward_ext || s.reward_tom == 0.0));
    assert!(out
        .adv
        .samples()
        .all(|s| s.reward_tom == 0.0 && s.reward == s.reward_ext));
}

#[test]
fn adversary_never_trains_when_swap_equals_budget() {
    let mut cfg = small_run(PopulationSetup::first_order(), PopulationSetup::first_order());
    cfg.train.swap_interval = cfg.train.total_steps;
    let outcome = train_alternating(&cfg, &mut |_| Ok(()), None).unwrap();
    let initial_adv = PolicyParams::new(cfg.policy_spec(Role::Adversary), derive_seed(cfg.train.seed, 2)).unwrap();
    let initial_good = PolicyParams::new(cfg.policy_spec(Role::Good), derive_seed(cfg.train.seed, 1)).unwrap();
    assert_eq!(outcome.adv.params, initial_adv);
    assert_ne!(outcome.good.params, initial_good);
    assert!(outcome.metrics.iter().all(|m| m.population == Role::Good));
}

#[test]
fn one_metrics_record_per_update_and_phases_alternate() {
    let cfg = small_run(PopulationSetup::baseline(), PopulationSetup::baseline());
    let mut seen = Vec::new();
    let outcome = train_alternating(
        &cfg,
        &mut |r| {
            seen.push(r.clone());
            Ok(())
        },
        None,
    )
    .unwrap();
    let csv = |m: &[tomrl::trainer::MetricsRecord]| m.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&outcome.metrics), csv(&seen));
    assert_eq!(seen.len(), cfg.train.total_steps / cfg.train.rollout_len);
    for (i, r) in seen.iter().enumerate() {
        assert_eq!(r.update_index, i);
        assert_eq!(r.env_steps, (i + 1) * cfg.train.rollout_len);
        let expected = if i < 2 { Role::Good } else { Role::Adversary };
        assert_eq!(r.population, expected);
        assert!(r.r_tom_mean.is_nan());
    }
}

#[test]
fn frozen_population_is_untouched_during_a_phase() {
    let cfg = small_run(
        PopulationSetup::first_order(),
        PopulationSetup::second_order(IntrinsicConfig::default()),
    );
    let mut after_good_phase = None;
    let dir = tempfile::tempdir().unwrap();
    train_alternating(&cfg, &mut |_| Ok(()), Some(dir.path())).unwrap();
    for tag in ["swap256", "final"] {
        let (good, var) = tomrl::checkpoint::load(&dir.path().join(format!("good_{tag}.ckpt"))).unwrap();
        assert!(var.is_some());
        match &after_good_phase {
            None => after_good_phase = Some(good),
            Some(prev) => assert_eq!(&good, prev, "good agents changed while frozen"),
        }
    }
    let initial_adv = PolicyParams::new(cfg.policy_spec(Role::Adversary), derive_seed(cfg.train.seed, 2)).unwrap();
    let (adv_at_swap, _) = tomrl::checkpoint::load(&dir.path().join("adv_swap256.ckpt")).unwrap();
    assert_eq!(adv_at_swap, initial_adv);
}

#[test]
fn training_is_deterministic() {
    let cfg = small_run(
        PopulationSetup::second_order(IntrinsicConfig::default()),
        PopulationSetup::first_order(),
    );
    let a = train_alternating(&cfg, &mut |_| Ok(()), None).unwrap();
    let b = train_alternating(&cfg, &mut |_| Ok(()), None).unwrap();
    let bits = |m: &[tomrl::trainer::MetricsRecord]| m.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(bits(&a.metrics), bits(&b.metrics));
    assert_eq!(a.good.params, b.good.params);
    assert!(a
        .metrics
        .iter()
        .filter(|m| m.population == Role::Good)
        .all(|m| m.r_tom_mean <= 0.0));
}

#[test]
fn random_policies_evaluate_to_finite_rewards() {
    let cfg = small_run(PopulationSetup::baseline(), PopulationSetup::baseline());
    let good = PolicyParams::new(cfg.policy_spec(Role::Good), 1).unwrap();
    let adv = PolicyParams::new(cfg.policy_spec(Role::Adversary), 2).unwrap();
    let a = evaluate_policy(&cfg.env, &good, &adv, 30, 9).unwrap();
    let b = evaluate_policy(&cfg.env, &good, &adv, 30, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.episode_returns.len(), 30);
    assert!(a.good_mean.is_finite() && a.good_var.is_finite());
    assert!(a.adv_mean < 0.0);
    assert_eq!(a.trajectory.last().unwrap().episode, 29);
}

#[test]
fn invalid_run_config_is_rejected() {
    let mut cfg = small_run(PopulationSetup::baseline(), PopulationSetup::baseline());
    cfg.train.epsilon = 1.5;
    assert!(matches!(
        train_alternating(&cfg, &mut |_| Ok(()), None),
        Err(tomrl::Error::InvalidConfig(_))
    ));
}
