use evoloco_core::ppo::{
    decode_policy, encode_policy, ppo_loss, read_policy, squashed_log_prob, write_policy, Minibatch, PolicyFileError,
};
use evoloco_core::rng::rng_from_seed;
use evoloco_core::{generate_random, pendulum_walker, train_agent, Fitness, PolicyParams, PpoConfig, TrainingConfig};
use rand::Rng as _;

fn small_config() -> TrainingConfig {
    let mut cfg = TrainingConfig { num_envs: 4, horizon: 8, total_steps: 320, ..TrainingConfig::default() };
    cfg.allow_scaling_mismatch = true;
    cfg.ppo.hidden_sizes = vec![16, 16];
    cfg
}

#[test]
fn training_is_a_pure_function_of_its_inputs() {
    let cfg = small_config();
    let g = generate_random(12);
    let a = train_agent(&g, &cfg, 5).unwrap();
    let b = train_agent(&g, &cfg, 5).unwrap();
    assert_eq!(a.report.fitness, b.report.fitness);
    assert_eq!(encode_policy(&a.params), encode_policy(&b.params));
    let c = train_agent(&g, &cfg, 6).unwrap();
    assert_ne!(encode_policy(&a.params), encode_policy(&c.params));
}

#[test]
fn consumes_exactly_the_step_budget() {
    let cfg = small_config();
    let out = train_agent(&pendulum_walker(), &cfg, 0).unwrap();
    let r = &out.report;
    assert_eq!(r.steps_consumed, 320);
    assert_eq!(r.total_steps, 320);
    assert_eq!(r.window_steps, 32);
    assert_eq!(r.learning_curve.len(), 10);
    assert_eq!(r.learning_curve.last().unwrap().steps_consumed, 320);
    assert!(matches!(r.fitness, Fitness::Value(f) if f.is_finite()));
}

#[test]
fn invalid_config_is_an_error_not_a_divergence() {
    let cfg = TrainingConfig { total_steps: 321, ..small_config() };
    assert!(train_agent(&pendulum_walker(), &cfg, 0).is_err());
}

#[test]
fn policy_file_round_trip_and_rejection() {
    let out = train_agent(&generate_random(3), &small_config(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.policy");
    write_policy(&path, &out.params).unwrap();
    assert_eq!(read_policy(&path).unwrap(), out.params);

    let mut bytes = encode_policy(&out.params);
    assert_eq!(decode_policy(&bytes).unwrap(), out.params);
    bytes[0] = b'X';
    assert!(matches!(decode_policy(&bytes), Err(PolicyFileError::BadMagic)));
    let bytes = encode_policy(&out.params);
    assert!(decode_policy(&bytes[..bytes.len() - 3]).is_err());
}

fn batch_at_old_policy(params: &PolicyParams, n: usize, seed: u64) -> Minibatch {
    let mut rng = rng_from_seed(seed);
    let mut b = Minibatch::default();
    for _ in 0..n {
        let obs: Vec<f64> = (0..params.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = params.policy.forward(&obs);
        let u: Vec<f64> = mean.iter().map(|m| m + rng.random_range(-0.5..0.5)).collect();
        b.old_log_probs.push(squashed_log_prob(&mean, &params.log_std, &u));
        b.observations.push(obs);
        b.pre_tanh.push(u);
        b.advantages.push(rng.random_range(-2.0..2.0));
        b.returns.push(rng.random_range(-2.0..2.0));
    }
    b
}

#[test]
fn unit_ratio_gives_negative_mean_advantage() {
    let cfg = PpoConfig::default();
    let params = PolicyParams::new(5, 2, &cfg, &mut rng_from_seed(8));
    let batch = batch_at_old_policy(&params, 32, 9);
    let (parts, _) = ppo_loss(&params, &batch, &cfg, false);
    let mean_adv = batch.advantages.iter().sum::<f64>() / 32.0;
    assert!((parts.policy_loss + mean_adv).abs() < 1e-12);
    assert_eq!(parts.clip_fraction, 0.0);
    assert!(parts.approx_kl.abs() < 1e-12);
}

#[test]
fn zero_advantages_leave_policy_gradient_zero() {
    let cfg = PpoConfig::default();
    let params = PolicyParams::new(4, 3, &cfg, &mut rng_from_seed(2));
    let mut batch = batch_at_old_policy(&params, 16, 3);
    batch.advantages.iter_mut().for_each(|a| *a = 0.0);
    let (_, grad) = ppo_loss(&params, &batch, &cfg, true);
    let np = params.policy.params().len() + params.log_std.len();
    assert!(grad[..np].iter().all(|g| *g == 0.0));
    assert!(grad[np..].iter().any(|g| *g != 0.0));
}
