use criterion::{criterion_group, criterion_main, Criterion};
use nvmrl_core::netspec::TrainingPolicy;
use nvmrl_core::rl::{train_step, CorridorConfig, CorridorWorld, ToyNet, ToyNetConfig, Transition, NUM_ACTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rl(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = ToyNet::new(&ToyNetConfig::default(), &mut rng).unwrap();
    let n = net.input_len();
    let batch: Vec<Transition> = (0..16)
        .map(|_| Transition {
            state: (0..n).map(|_| rng.random()).collect(),
            action: rng.random_range(0..NUM_ACTIONS),
            reward: rng.random(),
            next_state: (0..n).map(|_| rng.random()).collect(),
            crash: false,
        })
        .collect();
    for policy in [TrainingPolicy::E2E, TrainingPolicy::LastK(2)] {
        c.bench_function(&format!("train_step_{policy}"), |b| {
            let mut online = net.clone();
            b.iter(|| train_step(&mut online, &net, &batch, 0.9, 1e-3, policy).unwrap())
        });
    }
    c.bench_function("corridor_step", |b| {
        let mut world = CorridorWorld::new(CorridorConfig::meta_default(), 3).unwrap();
        let mut i = 0;
        b.iter(|| {
            i += 1;
            world.step(i % NUM_ACTIONS).unwrap()
        })
    });
}

criterion_group!(benches, rl);
criterion_main!(benches);
