use nvmrl_core::costmodel::{
    calibrate, compare_per_image, fps_sweep, network_cost, policy_cost, reference_placement, CostTotals, FreeParam,
    HardwareSpec, ReferenceTable, DEFAULT_HW_CFG, DEFAULT_REFERENCE_CSV,
};
use nvmrl_core::netspec::{assign_placement, weight_footprint, Location, NetworkSpec, TrainingPolicy};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use TrainingPolicy::{LastK, E2E};

fn setup() -> (NetworkSpec, HardwareSpec) {
    (NetworkSpec::default_network(), HardwareSpec::default_hardware())
}

#[test]
fn every_layer_with_work_costs_something() {
    let (net, hw) = setup();
    for policy in [E2E, LastK(2), LastK(4)] {
        let budget = hw.sram_weight_budget.resolve(&net, policy).unwrap();
        let placement = assign_placement(&net, policy, budget, hw.scratch_bytes).unwrap();
        let c = network_cost(&net, policy, &placement, &hw).unwrap();
        for r in c.forward.iter().chain(&c.backward) {
            if r.macs > 0 {
                assert!(r.latency > 0.0 && r.energy > 0.0, "{} {}", r.phase, r.layer);
            }
        }
    }
}

#[test]
fn nvm_writes_only_when_trainable_weights_live_in_nvm() {
    let (net, hw) = setup();
    for k in 1..=5 {
        for n in [1, 4, 16] {
            assert_eq!(policy_cost(&net, LastK(k), n, &hw).unwrap().nvm_write_bits, 0.0, "L{k} N={n}");
        }
    }
    let budget = hw.sram_weight_budget.resolve(&net, E2E).unwrap();
    let placement = assign_placement(&net, E2E, budget, hw.scratch_bytes).unwrap();
    let nvm_bytes: u64 = placement.layers.iter().filter(|l| l.location == Location::Nvm).map(|l| l.bytes).sum();
    let e2e = policy_cost(&net, E2E, 4, &hw).unwrap();
    assert!(e2e.nvm_write_bits >= 8.0 * nvm_bytes as f64);
}

#[test]
fn per_image_cost_grows_with_k() {
    let (net, hw) = setup();
    for n in [1, 4, 32] {
        let costs: Vec<(f64, f64)> = [LastK(1), LastK(2), LastK(3), LastK(4), LastK(5), E2E]
            .iter()
            .map(|&p| {
                let c = policy_cost(&net, p, n, &hw).unwrap();
                (c.per_image_latency(), c.per_image_energy())
            })
            .collect();
        for w in costs.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1, "N={n}: {costs:?}");
        }
    }
}

#[test]
fn fps_ordering_over_batches() {
    let (net, hw) = setup();
    let pts = fps_sweep(&net, &[E2E, LastK(2), LastK(3), LastK(4)], 1..=32, &hw).unwrap();
    let fps = |p: TrainingPolicy, n: u64| pts.iter().find(|x| x.policy == p && x.batch == n).unwrap().fps;
    for n in 1..=32 {
        assert!(fps(LastK(2), n) >= fps(LastK(3), n), "N={n}");
        assert!(fps(LastK(3), n) >= fps(LastK(4), n), "N={n}");
        assert!(fps(LastK(4), n) > fps(E2E, n), "N={n}");
    }
    let ratio = fps(LastK(4), 4) / fps(E2E, 4);
    assert!((4.5..=6.5).contains(&ratio), "ratio {ratio}");
    // sorted by policy, then batch
    assert!(pts.windows(2).all(|w| (w[0].policy, w[0].batch) < (w[1].policy, w[1].batch)));
}

#[test]
fn reference_table_reductions() {
    let net = NetworkSpec::default_network();
    let t = ReferenceTable::shipped();
    let entries: Vec<_> = [E2E, LastK(3), LastK(4)].iter().map(|&p| t.per_image(p, &net).unwrap()).collect();
    let r = compare_per_image(&entries).unwrap();
    let l3 = r.iter().find(|x| x.policy == LastK(3)).unwrap();
    let l4 = r.iter().find(|x| x.policy == LastK(4)).unwrap();
    // oracle: hand sums of the table rows
    let fwd = (11.9285, 75.2259);
    let e2e = (fwd.0 + 94.2257, fwd.1 + 445.331);
    let l3_oracle = (fwd.0 + 0.0027 + 0.594 + 1.182, fwd.1 + 0.006 + 3.89 + 7.284);
    let l4_oracle = (l3_oracle.0 + 3.839, l3_oracle.1 + 20.69);
    assert!((l4.latency_reduction - (1.0 - l4_oracle.0 / e2e.0)).abs() < 1e-9);
    assert!((l4.energy_reduction - (1.0 - l4_oracle.1 / e2e.1)).abs() < 1e-9);
    assert!((l3.latency_reduction - (1.0 - l3_oracle.0 / e2e.0)).abs() < 1e-9);
    assert!((l4.latency_reduction * 100.0 - 83.47).abs() < 0.1);
    assert!((l4.energy_reduction * 100.0 - 79.43).abs() < 0.1);
    assert!((l3.latency_reduction * 100.0 - 87.08).abs() < 0.1);
    assert!((l3.energy_reduction * 100.0 - 83.40).abs() < 0.1);
}

#[test]
fn reference_rows_used_by_oracle_are_shipped() {
    for row in [
        "FC5+ReLU,backward,0.0027,160,2094,0.006",
        "FC4+ReLU,backward,0.594,1024,6548,3.89",
        "FC3+ReLU,backward,1.182,1024,6162,7.284",
        "FC2+ReLU,backward,3.839,1024,5390,20.69",
    ] {
        assert!(DEFAULT_REFERENCE_CSV.contains(row), "{row}");
    }
}

#[test]
fn shipped_hardware_is_a_calibration_fixed_point() {
    let (net, hw) = setup();
    assert_eq!(HardwareSpec::from_toml_str(DEFAULT_HW_CFG).unwrap(), hw);
    let placement = reference_placement(&net, &hw).unwrap();
    assert!(placement.layers.iter().all(|l| l.trainable));
    let cal = calibrate(&ReferenceTable::shipped(), &net, &hw, &FreeParam::ALL).unwrap();
    assert!(cal.warning.is_none());
    assert!((cal.memory.clock_frequency / hw.memory.clock_frequency - 1.0).abs() < 1e-6);
    for r in cal.rows.iter().filter(|r| r.phase == "forward" && !r.anchor) {
        assert!(r.latency_error().abs() <= 0.30, "{} latency {}", r.layer, r.latency_error());
        assert!(r.energy_error().abs() <= 0.40, "{} energy {}", r.layer, r.energy_error());
    }
}

#[test]
fn footprint_matches_placement_total() {
    let (net, hw) = setup();
    let total = weight_footprint(&net).total_bytes();
    for p in [E2E, LastK(2), LastK(3)] {
        let budget = hw.sram_weight_budget.resolve(&net, p).unwrap();
        let pl = assign_placement(&net, p, budget, hw.scratch_bytes).unwrap();
        assert_eq!(pl.nvm_total_bytes + pl.sram_weight_bytes, total);
    }
}

proptest! {
    #[test]
    fn totals_ignore_layer_order(seed in any::<u64>(), k in 1usize..=5) {
        let (net, hw) = setup();
        let policy = LastK(k);
        let budget = hw.sram_weight_budget.resolve(&net, policy).unwrap();
        let placement = assign_placement(&net, policy, budget, hw.scratch_bytes).unwrap();
        let c = network_cost(&net, policy, &placement, &hw).unwrap();
        let mut reports: Vec<_> = c.forward.iter().chain(&c.backward).cloned().collect();
        let base = CostTotals::from_reports(&reports);
        reports.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(CostTotals::from_reports(&reports), base);
    }
}
