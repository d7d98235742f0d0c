use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::PeArrayConfig;
use crate::netspec::{SramBudget, DEFAULT_SCRATCH_BYTES};

pub const DEFAULT_HW_CFG: &str = include_str!("../../../../data/default_hw.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryTechParams {
    /// seconds
    pub nvm_write_latency: f64,
    /// seconds
    pub nvm_read_latency: f64,
    /// joules per bit, including I/O and periphery
    pub nvm_write_energy: f64,
    /// joules per bit
    pub nvm_read_energy: f64,
    pub sram_read_energy: f64,
    pub sram_write_energy: f64,
    pub rf_access_energy: f64,
    /// Off-chip camera link, joules per bit.
    pub dram_link_energy: f64,
    /// hertz
    pub clock_frequency: f64,
}

impl MemoryTechParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nvm_write_latency", self.nvm_write_latency),
            ("nvm_read_latency", self.nvm_read_latency),
            ("nvm_write_energy", self.nvm_write_energy),
            ("nvm_read_energy", self.nvm_read_energy),
            ("sram_read_energy", self.sram_read_energy),
            ("sram_write_energy", self.sram_write_energy),
            ("rf_access_energy", self.rf_access_energy),
            ("clock_frequency", self.clock_frequency),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("memory.{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.dram_link_energy >= 0.0) {
            return Err(Error::Parameter("memory.dram_link_energy must be >= 0".into()));
        }
        if self.nvm_write_energy <= self.nvm_read_energy {
            return Err(Error::Parameter("memory.nvm_write_energy must exceed nvm_read_energy".into()));
        }
        if self.nvm_write_latency <= self.nvm_read_latency {
            return Err(Error::Parameter("memory.nvm_write_latency must exceed nvm_read_latency".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeEnergyParams {
    /// joules per MAC
    pub mac_energy: f64,
    /// joules per compare
    pub comparator_energy: f64,
    /// watts per powered PE
    pub pe_static_power: f64,
}

impl ComputeEnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mac_energy", self.mac_energy),
            ("comparator_energy", self.comparator_energy),
            ("pe_static_power", self.pe_static_power),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("compute.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBudget {
    Bytes(u64),
    Keyword(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHardware {
    #[serde(default)]
    pe_array: PeArrayConfig,
    memory: MemoryTechParams,
    compute: ComputeEnergyParams,
    scratch_bytes: Option<u64>,
    sram_weight_budget: Option<RawBudget>,
    camera_frame_latency: Option<f64>,
}

/// Everything the cost model needs about the hardware.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareSpec {
    pub pe: PeArrayConfig,
    pub memory: MemoryTechParams,
    pub compute: ComputeEnergyParams,
    pub scratch_bytes: u64,
    pub sram_weight_budget: SramBudget,
    /// Fixed per-frame latency of the camera link, seconds.
    pub camera_frame_latency: f64,
}

impl HardwareSpec {
    pub fn default_hardware() -> Self {
        Self::from_toml_str(DEFAULT_HW_CFG).expect("shipped hardware config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawHardware = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sram_weight_budget = match raw.sram_weight_budget {
            None => SramBudget::SizedToPolicy,
            Some(RawBudget::Bytes(b)) => SramBudget::Bytes(b),
            Some(RawBudget::Keyword(k)) if k == "policy" => SramBudget::SizedToPolicy,
            Some(RawBudget::Keyword(k)) => {
                return Err(Error::Config(format!(
                    "sram_weight_budget must be a byte count or \"policy\", got \"{k}\""
                )))
            }
        };
        let hw = HardwareSpec {
            pe: raw.pe_array,
            memory: raw.memory,
            compute: raw.compute,
            scratch_bytes: raw.scratch_bytes.unwrap_or(DEFAULT_SCRATCH_BYTES),
            sram_weight_budget,
            camera_frame_latency: raw.camera_frame_latency.unwrap_or(0.0),
        };
        hw.pe.validate()?;
        if !(hw.camera_frame_latency >= 0.0) {
            return Err(Error::Config("camera_frame_latency must be >= 0".into()));
        }
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        self.pe.validate()?;
        self.memory.validate()?;
        self.compute.validate()
    }

    /// Renders the hardware description back to the config format.
    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            scratch_bytes: u64,
            sram_weight_budget: RawBudget,
            camera_frame_latency: f64,
            pe_array: &'a PeArrayConfig,
            memory: &'a MemoryTechParams,
            compute: &'a ComputeEnergyParams,
        }
        let budget = match self.sram_weight_budget {
            SramBudget::Bytes(b) => RawBudget::Bytes(b),
            SramBudget::SizedToPolicy => RawBudget::Keyword("policy".into()),
        };
        toml::to_string(&Out {
            scratch_bytes: self.scratch_bytes,
            sram_weight_budget: budget,
            camera_frame_latency: self.camera_frame_latency,
            pe_array: &self.pe,
            memory: &self.memory,
            compute: &self.compute,
        })
        .expect("hardware spec serializes")
    }
}
