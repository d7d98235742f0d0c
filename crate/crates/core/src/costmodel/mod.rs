//! Latency, energy and traffic accounting on top of mapping plans.

mod calibrate;
mod compare;
mod iteration;
mod params;
mod reference;

pub use calibrate::{calibrate, reference_placement, Calibration, FreeParam, ResidualRow, ANCHORS};
pub use compare::{
    compare_per_image, compare_policies, fps_sweep, policy_cost, FpsPoint, PerImageCost, Reduction,
};
pub use iteration::{iteration_cost, network_cost, CostTotals, NetworkCost, TrainingCost};
pub use params::{ComputeEnergyParams, HardwareSpec, MemoryTechParams, DEFAULT_HW_CFG};
pub use reference::{load_reference_table, ReferenceRow, ReferenceTable, DEFAULT_REFERENCE_CSV};

use serde::Serialize;

use crate::error::Result;
use crate::mapper::{MappingPlan, PeArrayConfig};
use crate::netspec::Location;

/// Bits per memory channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Traffic {
    pub nvm_read: f64,
    pub nvm_write: f64,
    pub sram_read: f64,
    pub sram_write: f64,
    pub off_chip: f64,
}

impl Traffic {
    pub fn add(&mut self, o: &Traffic) {
        self.nvm_read += o.nvm_read;
        self.nvm_write += o.nvm_write;
        self.sram_read += o.sram_read;
        self.sram_write += o.sram_write;
        self.off_chip += o.off_chip;
    }

    pub fn scaled(&self, k: f64) -> Traffic {
        Traffic {
            nvm_read: self.nvm_read * k,
            nvm_write: self.nvm_write * k,
            sram_read: self.sram_read * k,
            sram_write: self.sram_write * k,
            off_chip: self.off_chip * k,
        }
    }
}

/// Joules split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub nvm: f64,
    pub sram: f64,
    pub rf: f64,
    pub mac: f64,
    pub comparator: f64,
    pub static_: f64,
    pub off_chip: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.nvm + self.sram + self.rf + self.mac + self.comparator + self.static_ + self.off_chip
    }

    /// Everything that does not scale with time.
    pub fn traffic(&self) -> f64 {
        self.nvm + self.sram + self.rf + self.off_chip
    }

    pub fn add(&mut self, o: &EnergyBreakdown) {
        self.nvm += o.nvm;
        self.sram += o.sram;
        self.rf += o.rf;
        self.mac += o.mac;
        self.comparator += o.comparator;
        self.static_ += o.static_;
        self.off_chip += o.off_chip;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub layer: String,
    pub phase: String,
    /// seconds
    pub latency: f64,
    /// joules
    pub energy: f64,
    /// watts
    pub avg_power: f64,
    pub active_pes: u64,
    pub traffic: Traffic,
    pub breakdown: EnergyBreakdown,
    /// Static-power exposure (seconds x powered PEs x utilization).
    pub pe_seconds: f64,
    pub macs: u64,
}

/// Cost of one plan, without its weight-gradient sub-plan.
fn plan_cost(plan: &MappingPlan, mem: &MemoryTechParams, comp: &ComputeEnergyParams, bits: u64) -> (f64, EnergyBreakdown, Traffic, f64) {
    let passes = plan.passes as f64;
    let t = plan.per_pass;
    let from_nvm = plan.weight_source == Location::Nvm && t.weight_bits > 0;
    let expansion_bits = plan.expansion.map_or(0.0, |e| (e.elements() * bits) as f64);

    // NVM-resident weights stream from the stack straight into the array
    let sram_weight_bits = if from_nvm { 0 } else { t.weight_bits };
    let mut traffic = Traffic {
        sram_read: passes * (sram_weight_bits + t.input_bits + t.psum_read_bits) as f64 + expansion_bits,
        sram_write: passes * t.output_bits as f64 + expansion_bits,
        ..Default::default()
    };
    if plan.accumulate {
        traffic.sram_read += passes * t.output_bits as f64;
    }
    if from_nvm {
        traffic.nvm_read = passes * t.weight_bits as f64;
    }
    let rf_bits = 3.0 * bits as f64 * plan.macs as f64
        + passes * (t.weight_bits + t.input_bits + t.psum_read_bits + t.output_bits + t.inter_pe_bits) as f64;

    let mut latency = plan.cycles() as f64 / mem.clock_frequency;
    if from_nvm {
        latency += mem.nvm_read_latency;
    }
    let pe_seconds = latency * plan.powered_pes as f64 * plan.utilization;
    let energy = EnergyBreakdown {
        nvm: traffic.nvm_read * mem.nvm_read_energy,
        sram: traffic.sram_read * mem.sram_read_energy + traffic.sram_write * mem.sram_write_energy,
        rf: rf_bits * mem.rf_access_energy,
        mac: plan.macs as f64 * comp.mac_energy,
        comparator: plan.comparator.ops as f64 * comp.comparator_energy,
        static_: pe_seconds * comp.pe_static_power,
        off_chip: 0.0,
    };
    (latency, energy, traffic, pe_seconds)
}

/// Latency, energy and traffic of one layer in one phase, including any
/// weight-gradient sub-plan.
pub fn layer_cost(
    plan: &MappingPlan,
    bits: u32,
    mem: &MemoryTechParams,
    comp: &ComputeEnergyParams,
) -> Result<CostReport> {
    mem.validate()?;
    comp.validate()?;
    let bits = bits as u64;
    let (mut latency, mut breakdown, mut traffic, mut pe_seconds) = plan_cost(plan, mem, comp, bits);
    let mut macs = plan.macs;
    if let Some(g) = &plan.weight_gradient {
        let (l, e, t, s) = plan_cost(g, mem, comp, bits);
        latency += l;
        breakdown.add(&e);
        traffic.add(&t);
        pe_seconds += s;
        macs += g.macs;
    }
    let energy = breakdown.total();
    Ok(CostReport {
        layer: plan.label.clone(),
        phase: if plan.phase.is_forward() { "forward" } else { "backward" }.to_string(),
        latency,
        energy,
        avg_power: if latency > 0.0 { energy / latency } else { 0.0 },
        active_pes: plan.active_pes,
        traffic,
        breakdown,
        pe_seconds,
        macs,
    })
}

/// Cycles needed to move `bits` through the global-buffer row links.
pub(crate) fn gbuf_cycles(bits: u64, pe: &PeArrayConfig) -> u64 {
    bits.div_ceil(pe.gbuf_row_links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{plan_conv_forward, plan_pool};
    use crate::netspec::{infer_shapes, NetworkSpec, Pool, Shape};

    #[test]
    fn pool_only_layer_has_latency_and_no_nvm() {
        let hw = HardwareSpec::default_hardware();
        let plan = plan_pool("POOL", Shape::Map { h: 27, w: 27, c: 64 }, Pool { size: 3, stride: 2 }, &hw.pe, 16).unwrap();
        let c = layer_cost(&plan, 16, &hw.memory, &hw.compute).unwrap();
        assert!(c.latency > 0.0);
        assert_eq!(c.traffic.nvm_read, 0.0);
        assert_eq!(c.traffic.nvm_write, 0.0);
    }

    #[test]
    fn doubling_clock_halves_cycle_time() {
        let hw = HardwareSpec::default_hardware();
        let shapes = infer_shapes(&NetworkSpec::default_network()).unwrap();
        let plan = plan_conv_forward(&shapes[0], &hw.pe, 16).unwrap();
        let a = layer_cost(&plan, 16, &hw.memory, &hw.compute).unwrap();
        let mut fast = hw.memory;
        fast.clock_frequency *= 2.0;
        let b = layer_cost(&plan, 16, &fast, &hw.compute).unwrap();
        let fixed = hw.memory.nvm_read_latency;
        let ratio = (b.latency - fixed) / (a.latency - fixed);
        assert!((ratio - 0.5).abs() < 1e-12);
        assert_eq!(a.breakdown.traffic(), b.breakdown.traffic());
    }

    #[test]
    fn missing_parameters_rejected() {
        let hw = HardwareSpec::default_hardware();
        let shapes = infer_shapes(&NetworkSpec::default_network()).unwrap();
        let plan = plan_conv_forward(&shapes[0], &hw.pe, 16).unwrap();
        let mut mem = hw.memory;
        mem.clock_frequency = 0.0;
        assert!(layer_cost(&plan, 16, &mem, &hw.compute).is_err());
    }
}
