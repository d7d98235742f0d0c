use std::collections::BTreeMap;

use nvmrl_core::netspec::TrainingPolicy;
use nvmrl_core::rl::{run_experiment, ExperimentConfig};

/// Allowed drop of the seed-averaged smoothed reward across the final third,
/// relative to its level. Exploration noise at this scale makes a strict
/// zero-slope check flaky.
const TREND_SLACK: f64 = 0.05;

#[test]
fn default_experiment_properties() {
    let cfg = ExperimentConfig::default();
    let runs = run_experiment(&cfg).unwrap();
    assert_eq!(runs.len(), cfg.seeds.len() * cfg.policies.len());

    let mut by_policy: BTreeMap<TrainingPolicy, Vec<_>> = BTreeMap::new();
    for r in &runs {
        by_policy.entry(r.policy).or_default().push(r);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut reward = BTreeMap::new();
    let mut sfd = BTreeMap::new();
    for (p, rs) in &by_policy {
        let level = mean(&rs.iter().map(|r| r.final_third_reward.unwrap()).collect::<Vec<_>>());
        let slope = mean(&rs.iter().map(|r| r.log.final_third_slope().unwrap()).collect::<Vec<_>>());
        let span = (cfg.fine_tune_steps - cfg.window(cfg.fine_tune_steps) + 1) as f64 / 3.0;
        assert!(slope * span >= -TREND_SLACK * level.abs(), "{p}: drift {} at level {level}", slope * span);
        reward.insert(*p, level);
        sfd.insert(*p, mean(&rs.iter().map(|r| r.sfd.unwrap()).collect::<Vec<_>>()));
    }
    let e2e = TrainingPolicy::E2E;
    for p in by_policy.keys().filter(|p| **p != e2e) {
        assert!(reward[p] >= 0.9 * reward[&e2e], "{p}: {} vs {}", reward[p], reward[&e2e]);
        assert!((sfd[p] / sfd[&e2e] - 1.0).abs() <= 0.25, "{p}: sfd {} vs {}", sfd[p], sfd[&e2e]);
    }
}
