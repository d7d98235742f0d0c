use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use super::{iteration_cost, HardwareSpec, TrainingCost};
use crate::error::{Error, Result};
use crate::netspec::{assign_placement, NetworkSpec, TrainingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerImageCost {
    pub policy: TrainingPolicy,
    /// seconds
    pub latency: f64,
    /// joules
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reduction {
    pub policy: TrainingPolicy,
    pub latency: f64,
    pub energy: f64,
    /// Fraction saved relative to E2E, 0..1.
    pub latency_reduction: f64,
    pub energy_reduction: f64,
}

/// Reductions of every entry relative to the E2E entry.
pub fn compare_per_image(entries: &[PerImageCost]) -> Result<Vec<Reduction>> {
    if entries.len() < 2 {
        return Err(Error::Comparison(format!(
            "need at least two policies to compare, got {}",
            entries.len()
        )));
    }
    let base = entries
        .iter()
        .find(|e| e.policy == TrainingPolicy::E2E)
        .ok_or_else(|| Error::Comparison("E2E baseline missing from policy list".into()))?;
    Ok(entries
        .iter()
        .map(|e| Reduction {
            policy: e.policy,
            latency: e.latency,
            energy: e.energy,
            latency_reduction: 1.0 - e.latency / base.latency,
            energy_reduction: 1.0 - e.energy / base.energy,
        })
        .collect())
}

/// Model cost of one policy with its SRAM budget resolved from the hardware spec.
pub fn policy_cost(net: &NetworkSpec, policy: TrainingPolicy, n: u64, hw: &HardwareSpec) -> Result<TrainingCost> {
    let budget = hw.sram_weight_budget.resolve(net, policy)?;
    let placement = assign_placement(net, policy, budget, hw.scratch_bytes)?;
    iteration_cost(net, policy, n, &placement, hw)
}

pub fn compare_policies(
    net: &NetworkSpec,
    policies: &[TrainingPolicy],
    n: u64,
    hw: &HardwareSpec,
) -> Result<Vec<Reduction>> {
    let entries = policies
        .iter()
        .map(|&p| {
            let c = policy_cost(net, p, n, hw)?;
            Ok(PerImageCost {
                policy: p,
                latency: c.per_image_latency(),
                energy: c.per_image_energy(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare_per_image(&entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpsPoint {
    pub policy: TrainingPolicy,
    pub batch: u64,
    pub fps: f64,
    /// seconds
    pub iteration_latency: f64,
}

/// fps for every (policy, batch) point, sorted by policy then batch.
pub fn fps_sweep(
    net: &NetworkSpec,
    policies: &[TrainingPolicy],
    batches: RangeInclusive<u64>,
    hw: &HardwareSpec,
) -> Result<Vec<FpsPoint>> {
    if batches.is_empty() || *batches.start() == 0 {
        return Err(Error::Domain(format!(
            "batch range {}..{} must be non-empty and start at >= 1",
            batches.start(),
            batches.end()
        )));
    }
    let points: Vec<(TrainingPolicy, u64)> = policies
        .iter()
        .flat_map(|&p| batches.clone().map(move |n| (p, n)))
        .collect();
    let mut out = points
        .par_iter()
        .map(|&(p, n)| {
            let c = policy_cost(net, p, n, hw)?;
            Ok(FpsPoint {
                policy: p,
                batch: n,
                fps: c.fps,
                iteration_latency: c.iteration_latency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.batch.cmp(&b.batch)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e2e_against_itself_is_zero() {
        let e = PerImageCost {
            policy: TrainingPolicy::E2E,
            latency: 0.1,
            energy: 0.5,
        };
        let r = compare_per_image(&[e, e]).unwrap();
        assert!(r.iter().all(|x| x.latency_reduction == 0.0 && x.energy_reduction == 0.0));
    }

    #[test]
    fn missing_baseline_is_error() {
        let e = PerImageCost {
            policy: TrainingPolicy::LastK(3),
            latency: 0.1,
            energy: 0.5,
        };
        assert!(matches!(compare_per_image(&[e, e]), Err(Error::Comparison(_))));
    }
}
