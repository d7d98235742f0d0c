//! Analytical latency/energy model for a systolic-array CNN training
//! accelerator backed by stacked STT-MRAM and on-die SRAM, plus a small
//! Q-learning core for checking last-k-layer fine-tuning.

pub mod costmodel;
pub mod envelope;
pub mod error;
pub mod mapper;
pub mod netspec;
pub mod rl;

pub use costmodel::{CostReport, HardwareSpec, ReferenceTable, TrainingCost};
pub use error::{Error, Result};
pub use mapper::{MappingPlan, PeArrayConfig};
pub use netspec::{NetworkSpec, PlacementMap, TrainingPolicy};
