use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nvmrl_core::costmodel::{calibrate, fps_sweep, policy_cost, FreeParam, ReferenceTable};
use nvmrl_core::mapper::{plan_phase, Direction};
use nvmrl_core::netspec::{assign_placement, infer_shapes, TrainingPolicy};
use nvmrl_core::{HardwareSpec, NetworkSpec};

fn cost(c: &mut Criterion) {
    let net = NetworkSpec::default_network();
    let hw = HardwareSpec::default_hardware();
    let policies = [TrainingPolicy::E2E, TrainingPolicy::LastK(4)];

    let shapes = infer_shapes(&net).unwrap();
    let placement = assign_placement(&net, TrainingPolicy::E2E, 0, hw.scratch_bytes).unwrap();
    c.bench_function("plan_forward", |b| {
        b.iter(|| {
            plan_phase(&shapes, TrainingPolicy::E2E, &placement, Direction::Forward, &hw.pe, net.weight_precision_bits)
                .unwrap()
        })
    });
    c.bench_function("policy_cost_e2e_n4", |b| {
        b.iter(|| policy_cost(&net, black_box(TrainingPolicy::E2E), 4, &hw).unwrap())
    });
    c.bench_function("fps_sweep_2x32", |b| b.iter(|| fps_sweep(&net, &policies, 1..=32, &hw).unwrap()));
    let reference = ReferenceTable::shipped();
    c.bench_function("calibrate_all", |b| {
        b.iter(|| calibrate(&reference, &net, &hw, &FreeParam::ALL).unwrap())
    });
}

criterion_group!(benches, cost);
criterion_main!(benches);
