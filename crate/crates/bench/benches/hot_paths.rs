use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use evoloco_core::env::{EnvConfig, LocomotionEnv, VectorEnv};
use evoloco_core::nn::{ForwardCache, Mlp};
use evoloco_core::physics::{instantiate, WorldConfig};
use evoloco_core::ppo::{compute_gae, PolicyParams, PpoConfig};
use evoloco_core::rng::rng_from_seed;
use evoloco_core::{generate_random, mutate, pendulum_walker, serialize_genome, topological_signature};

fn physics(c: &mut Criterion) {
    let world = WorldConfig::default();
    let large = (0..).map(generate_random).find(|g| g.limb_count() >= 6).unwrap();
    for genome in [pendulum_walker(), large] {
        let body = instantiate(&genome, &world);
        let torques: Vec<f64> = body.joints.iter().map(|j| 0.3 * j.torque_limit).collect();
        c.bench_function(&format!("physics_step_{}_limbs", genome.limb_count()), |b| {
            b.iter_batched_ref(
                || body.clone(),
                |body| body.step(black_box(&torques), &world).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn vector_env(c: &mut Criterion) {
    let genome = generate_random(3);
    let env = LocomotionEnv::new(&genome, EnvConfig::default());
    let actions = vec![vec![0.2; env.action_dim()]; 64];
    let venv = VectorEnv::new(env, 64, 1);
    c.bench_function("vector_env_step_64", |b| {
        b.iter_batched_ref(|| venv.clone(), |v| v.step(black_box(&actions)).unwrap(), BatchSize::SmallInput)
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = rng_from_seed(0);
    let params = PolicyParams::new(40, 9, &PpoConfig::default(), &mut rng);
    let obs = vec![0.1; 40];
    c.bench_function("policy_forward", |b| b.iter(|| params.policy.forward(black_box(&obs))));
    let mlp: &Mlp = &params.policy;
    let mut cache = ForwardCache::default();
    let mut grad = vec![0.0; mlp.params().len()];
    let d_out = vec![1.0; 9];
    c.bench_function("policy_forward_backward", |b| {
        b.iter(|| {
            mlp.forward_cached(black_box(&obs), &mut cache);
            mlp.backward(&cache, &d_out, &mut grad);
        })
    });
    let n = 64 * 32;
    let rewards: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 0.1).collect();
    let values = vec![0.5; n];
    let dones: Vec<bool> = (0..n).map(|i| i % 97 == 0).collect();
    let last = vec![0.4; 64];
    c.bench_function("gae_64x32", |b| {
        b.iter(|| compute_gae(black_box(&rewards), &values, &dones, &last, 0.99, 0.95))
    });
}

fn genomes(c: &mut Criterion) {
    let g = generate_random(9);
    c.bench_function("topological_signature", |b| b.iter(|| topological_signature(black_box(&g))));
    c.bench_function("serialize_genome", |b| b.iter(|| serialize_genome(black_box(&g))));
    c.bench_function("mutate", |b| b.iter(|| mutate(black_box(&g), 4)));
}

criterion_group!(benches, physics, vector_env, networks, genomes);
criterion_main!(benches);
