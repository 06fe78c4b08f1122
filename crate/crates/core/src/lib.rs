//! Analytical performance, area and cost models for LLM inference hardware.
//!
//! A [`SystemDescriptor`] describes the hardware, a [`ModelConfig`] plus an
//! [`InferenceScenario`] describe the work. Operators are timed tile by tile
//! ([`opsim`]) under the best plan the [`mapper`] finds, and summed into
//! stage and end-to-end latency by [`inference`].

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod areacost;
pub mod error;
pub mod hwdesc;
pub mod inference;
pub mod mapper;
pub mod netsim;
pub mod opsim;
pub mod systolic;
pub mod workload;

pub use areacost::{AreaBreakdown, AreaCostReport, AreaParams, PriceTable, WaferParams};
pub use error::{Error, Result};
pub use hwdesc::{
    load_system_descriptor, parse_system_descriptor, preset, preset_by_name, CoreDescriptor, DeviceDescriptor,
    LinkParameters, MemoryProtocol, PresetName, SystemDescriptor, Topology,
};
pub use inference::{GenerationRequest, InferenceOptions, InferenceReport, InferenceSimulator, StageReport};
pub use mapper::{find_optimal_mapping, Mapper, SearchBudget};
pub use netsim::CollectiveSpec;
pub use opsim::{LatencyReport, MappingPlan, ScheduleScheme, Simulator, Tile};
pub use systolic::{CycleMemoTable, SystolicQuery};
pub use workload::{
    load_model_config, parse_model_config, InferenceScenario, ModelConfig, OpShape, OperatorGraph, OperatorSpec, Stage,
};
