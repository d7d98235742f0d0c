use serde::Serialize;

use super::{gbuf_cycles, layer_cost, CostReport, EnergyBreakdown, HardwareSpec, Traffic};
use crate::error::{Error, Result};
use crate::mapper::{plan_phase, Direction};
use crate::netspec::{infer_shapes, Location, NetworkSpec, PlacementMap, TrainingPolicy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostTotals {
    pub latency: f64,
    pub energy: f64,
    pub traffic: Traffic,
}

impl CostTotals {
    /// Sums in sorted order so the result does not depend on report order.
    pub fn from_reports(reports: &[CostReport]) -> Self {
        let sum = |f: fn(&CostReport) -> f64| {
            let mut v: Vec<f64> = reports.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.into_iter().sum::<f64>()
        };
        CostTotals {
            latency: sum(|r| r.latency),
            energy: sum(|r| r.energy),
            traffic: Traffic {
                nvm_read: sum(|r| r.traffic.nvm_read),
                nvm_write: sum(|r| r.traffic.nvm_write),
                sram_read: sum(|r| r.traffic.sram_read),
                sram_write: sum(|r| r.traffic.sram_write),
                off_chip: sum(|r| r.traffic.off_chip),
            },
        }
    }
}

/// Per-image layer costs for one policy and placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkCost {
    pub forward: Vec<CostReport>,
    pub backward: Vec<CostReport>,
}

pub fn network_cost(
    net: &NetworkSpec,
    policy: TrainingPolicy,
    placement: &PlacementMap,
    hw: &HardwareSpec,
) -> Result<NetworkCost> {
    let shapes = infer_shapes(net)?;
    let bits = net.weight_precision_bits;
    let cost = |dir| -> Result<Vec<CostReport>> {
        plan_phase(&shapes, policy, placement, dir, &hw.pe, bits)?
            .iter()
            .map(|p| layer_cost(p, bits, &hw.memory, &hw.compute))
            .collect()
    };
    Ok(NetworkCost {
        forward: cost(Direction::Forward)?,
        backward: cost(Direction::Backward)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingCost {
    pub policy: TrainingPolicy,
    pub batch_size: u64,
    pub per_image_forward: CostTotals,
    pub per_image_backward: CostTotals,
    pub weight_update: CostTotals,
    /// seconds
    pub iteration_latency: f64,
    /// joules
    pub iteration_energy: f64,
    pub fps: f64,
    pub nvm_write_bits: f64,
}

impl TrainingCost {
    /// Combines per-image and per-iteration parts for a batch of `n` images.
    pub fn assemble(
        policy: TrainingPolicy,
        n: u64,
        forward: CostTotals,
        backward: CostTotals,
        update: CostTotals,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("batch size must be >= 1".into()));
        }
        let nf = n as f64;
        let iteration_latency = nf * (forward.latency + backward.latency) + update.latency;
        let iteration_energy = nf * (forward.energy + backward.energy) + update.energy;
        Ok(TrainingCost {
            policy,
            batch_size: n,
            per_image_forward: forward,
            per_image_backward: backward,
            weight_update: update,
            iteration_latency,
            iteration_energy,
            fps: nf / iteration_latency,
            nvm_write_bits: nf * (forward.traffic.nvm_write + backward.traffic.nvm_write) + update.traffic.nvm_write,
        })
    }

    pub fn per_image_latency(&self) -> f64 {
        self.iteration_latency / self.batch_size as f64
    }

    pub fn per_image_energy(&self) -> f64 {
        self.iteration_energy / self.batch_size as f64
    }
}

/// One write of every trainable layer to wherever it lives.
fn weight_update(placement: &PlacementMap, hw: &HardwareSpec) -> CostTotals {
    let mem = &hw.memory;
    let nvm_rate = hw.pe.nvm_io_lanes as f64 * hw.pe.nvm_io_bandwidth_bits_per_s;
    let mut total = CostTotals::default();
    for l in placement.layers.iter().filter(|l| l.trainable) {
        let bits = (l.bytes * 8) as f64;
        let (latency, traffic) = match l.location {
            Location::Sram => {
                // read gradient, read weight, write weight
                let cycles = 3 * gbuf_cycles(l.bytes * 8, &hw.pe);
                (
                    cycles as f64 / mem.clock_frequency,
                    Traffic {
                        sram_read: 2.0 * bits,
                        sram_write: bits,
                        ..Default::default()
                    },
                )
            }
            Location::Nvm => (
                2.0 * bits / nvm_rate + mem.nvm_read_latency + mem.nvm_write_latency,
                Traffic {
                    nvm_read: bits,
                    nvm_write: bits,
                    sram_read: bits,
                    ..Default::default()
                },
            ),
        };
        let e = EnergyBreakdown {
            nvm: traffic.nvm_read * mem.nvm_read_energy + traffic.nvm_write * mem.nvm_write_energy,
            sram: traffic.sram_read * mem.sram_read_energy + traffic.sram_write * mem.sram_write_energy,
            ..Default::default()
        };
        total.latency += latency;
        total.energy += e.total();
        total.traffic.add(&traffic);
    }
    total
}

/// Full training-iteration cost: `n` serial forward/backward passes plus one
/// weight update.
pub fn iteration_cost(
    net: &NetworkSpec,
    policy: TrainingPolicy,
    n: u64,
    placement: &PlacementMap,
    hw: &HardwareSpec,
) -> Result<TrainingCost> {
    if n == 0 {
        return Err(Error::Domain("batch size must be >= 1".into()));
    }
    let costs = network_cost(net, policy, placement, hw)?;
    let mut forward = CostTotals::from_reports(&costs.forward);
    let frame_bits = (net.input_h * net.input_w * net.input_channels * net.weight_precision_bits as u64) as f64;
    forward.latency += hw.camera_frame_latency;
    forward.energy += frame_bits * hw.memory.dram_link_energy;
    forward.traffic.off_chip += frame_bits;
    let backward = CostTotals::from_reports(&costs.backward);
    let update = weight_update(placement, hw);
    TrainingCost::assemble(policy, n, forward, backward, update)
}
