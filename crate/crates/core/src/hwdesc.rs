//! Hardware description template: system → device → core → lane.
//!
//! Descriptors are plain immutable values. They are read from and written to
//! a TOML document with `system`, `device`, `core`, `lane` and `interconnect`
//! sections (see `docs/hardware-schema.md`). Capacities use binary prefixes
//! (1 KB = 1024 bytes), bandwidths use decimal ones (1 GB/s = 1e9 bytes/s).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "hwdesc";

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
pub const GIB: u64 = 1024 * MIB;

/// Estimates used when a document omits the field. These are calibration
/// values, not published specifications.
pub mod defaults {
    pub const REGISTER_FILE_BYTES_PER_LANE: u64 = 64 * super::KIB;
    pub const KERNEL_LAUNCH_OVERHEAD_S: f64 = 1.0e-5;
    pub const LINK_LATENCY_S: f64 = 1.0e-6;
    pub const LINK_OVERHEAD_S: f64 = 1.0e-6;
    pub const MAX_PAYLOAD_BYTES: u64 = 256;
    pub const FLIT_SIZE_BYTES: u64 = 16;
    pub const TRANSCENDENTAL_CYCLES: u32 = 4;
    pub const DIVIDE_CYCLES: u32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    FullyConnected,
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryProtocol {
    #[serde(alias = "HBM2e", alias = "HBM2E")]
    Hbm2e,
    /// DDR DIMMs or PCIe/CXL-attached DRAM.
    #[serde(alias = "pcie", alias = "cxl", alias = "DDR")]
    Ddr,
    /// No off-chip main memory; operands live in the global buffer.
    None,
}

impl MemoryProtocol {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryProtocol::Hbm2e => "hbm2e",
            MemoryProtocol::Ddr => "ddr",
            MemoryProtocol::None => "none",
        }
    }
}

/// Link model parameters for device-device transfers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParameters {
    pub latency_s: f64,
    pub overhead_s: f64,
    pub bandwidth_bytes_per_s: f64,
    pub max_payload_bytes: u64,
    pub flit_size_bytes: u64,
}

impl LinkParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_bytes_per_s > 0.0) {
            return Err(Error::invariant(
                MODULE,
                "interconnect.bandwidth_bytes_per_s must be > 0",
            ));
        }
        if self.max_payload_bytes == 0 {
            return Err(Error::invariant(MODULE, "interconnect.max_payload_bytes must be > 0"));
        }
        if !(self.latency_s >= 0.0) || !(self.overhead_s >= 0.0) {
            return Err(Error::invariant(
                MODULE,
                "interconnect latency and overhead must be >= 0",
            ));
        }
        Ok(())
    }
}

/// A core (SM / compute unit): lanes sharing one local buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreDescriptor {
    pub lane_count: u32,
    /// Elementary fp16 operations retired per cycle by one lane's vector unit.
    pub vector_width: u32,
    pub systolic_rows: u32,
    pub systolic_cols: u32,
    pub local_buffer_bytes: u64,
    /// Local buffer ↔ lanes bandwidth for the whole core.
    pub local_buffer_bytes_per_cycle: f64,
    pub register_file_bytes_per_lane: u64,
    pub transcendental_cycles: u32,
    pub divide_cycles: u32,
}

impl CoreDescriptor {
    /// Default local-buffer bandwidth: enough to feed every lane's systolic
    /// edge or full vector width each cycle.
    pub fn default_local_bandwidth(lane_count: u32, vector_width: u32, rows: u32, cols: u32) -> f64 {
        let per_lane = (rows + cols).max(2 * vector_width) as f64 * 2.0;
        lane_count as f64 * per_lane
    }

    pub fn validate(&self) -> Result<()> {
        if self.lane_count == 0 {
            return Err(Error::invariant(MODULE, "core.lane_count must be >= 1"));
        }
        if self.systolic_rows == 0 || self.systolic_cols == 0 {
            return Err(Error::invariant(
                MODULE,
                "lane.systolic_rows and lane.systolic_cols must be >= 1",
            ));
        }
        if self.vector_width == 0 {
            return Err(Error::invariant(MODULE, "lane.vector_width must be >= 1"));
        }
        if self.local_buffer_bytes == 0 {
            return Err(Error::invariant(MODULE, "core.local_buffer_bytes must be > 0"));
        }
        if !(self.local_buffer_bytes_per_cycle >= 0.0) {
            return Err(Error::invariant(
                MODULE,
                "core.local_buffer_bytes_per_cycle must be >= 0",
            ));
        }
        Ok(())
    }
}

/// A device (GPU / TPU chip): cores, a shared global buffer and main memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub frequency_hz: f64,
    pub core_count: u32,
    pub global_buffer_bytes: u64,
    /// Global buffer ↔ cores bandwidth, shared by all cores.
    pub global_buffer_bytes_per_cycle: f64,
    pub memory_bandwidth_bytes_per_s: f64,
    pub memory_capacity_bytes: u64,
    pub memory_protocol: MemoryProtocol,
    pub kernel_launch_overhead_s: f64,
    pub core: CoreDescriptor,
}

impl DeviceDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0) {
            return Err(Error::invariant(MODULE, "device.frequency_hz must be > 0"));
        }
        if self.core_count == 0 {
            return Err(Error::invariant(MODULE, "device.core_count must be >= 1"));
        }
        for (name, v) in [
            (
                "device.global_buffer_bytes_per_cycle",
                self.global_buffer_bytes_per_cycle,
            ),
            ("device.memory_bandwidth_bytes_per_s", self.memory_bandwidth_bytes_per_s),
            ("device.kernel_launch_overhead_s", self.kernel_launch_overhead_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invariant(MODULE, format!("{name} must be finite and >= 0")));
            }
        }
        self.core.validate()
    }

    pub fn has_main_memory(&self) -> bool {
        self.memory_protocol != MemoryProtocol::None
    }

    /// Bandwidth of the level operands are streamed from: main memory, or the
    /// global buffer for devices without main memory.
    pub fn backing_bandwidth(&self) -> f64 {
        if self.has_main_memory() {
            self.memory_bandwidth_bytes_per_s
        } else {
            self.global_buffer_bytes_per_cycle * self.frequency_hz
        }
    }

    /// Capacity that must hold parameters, KV cache and activations.
    pub fn backing_capacity(&self) -> u64 {
        if self.has_main_memory() {
            self.memory_capacity_bytes
        } else {
            self.global_buffer_bytes
        }
    }

    pub fn total_lanes(&self) -> u64 {
        self.core_count as u64 * self.core.lane_count as u64
    }

    /// Canonical identity string used as a cache key.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }
}

/// flops/s of the systolic arrays, two flops per MAC.
pub fn peak_compute_throughput(device: &DeviceDescriptor) -> f64 {
    let c = &device.core;
    device.core_count as f64
        * c.lane_count as f64
        * c.systolic_rows as f64
        * c.systolic_cols as f64
        * 2.0
        * device.frequency_hz
}

/// Elementary vector operations per second across all lanes.
pub fn peak_vector_throughput(device: &DeviceDescriptor) -> f64 {
    device.total_lanes() as f64 * device.core.vector_width as f64 * device.frequency_hz
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub devices: u32,
    pub topology: Topology,
    pub interconnect: LinkParameters,
    pub device: DeviceDescriptor,
}

impl SystemDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::invariant(MODULE, "system.devices must be >= 1"));
        }
        self.interconnect.validate()?;
        self.device.validate()
    }

    pub fn with_devices(mut self, devices: u32) -> Self {
        self.devices = devices;
        self
    }

    /// Renders the descriptor in the hardware-file format.
    pub fn render(&self) -> String {
        toml::to_string(&Document::from(self)).expect("document serializes")
    }

    /// Returns a copy with one document key replaced, e.g.
    /// `device.memory_bandwidth_bytes_per_s`. The result is re-validated.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.render()).map_err(|e| Error::Internal {
            module: MODULE,
            what: e.to_string(),
        })?;
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::schema(MODULE, key, "expected `section.field`"))?;
        let sec = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::schema(MODULE, section, "not a section"))?;
        // Integer fields accept float sweep values that are whole numbers.
        let value = match (sec.get(field), value) {
            (Some(toml::Value::Integer(_)), toml::Value::Float(f)) if f.fract() == 0.0 => {
                toml::Value::Integer(f as i64)
            }
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        sec.insert(field.to_string(), value);
        let text = toml::to_string(&table).map_err(|e| Error::Internal {
            module: MODULE,
            what: e.to_string(),
        })?;
        parse_system_descriptor(&text)
    }
}

/// Parses and validates a hardware description document.
pub fn parse_system_descriptor(text: &str) -> Result<SystemDescriptor> {
    let doc: Document = toml::from_str(text).map_err(|e| toml_error(MODULE, &e))?;
    let sys = doc.build()?;
    sys.validate()?;
    Ok(sys)
}

pub fn load_system_descriptor(path: &std::path::Path) -> Result<SystemDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_system_descriptor(&text)
}

pub(crate) fn toml_error(module: &'static str, e: &toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // serde reports unknown and missing keys with the key in backticks.
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    Error::schema(module, field, msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    A100,
    Mi210,
    #[serde(rename = "tpuv3-core")]
    Tpuv3Core,
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a100" => Ok(PresetName::A100),
            "mi210" => Ok(PresetName::Mi210),
            "tpuv3-core" | "tpuv3" => Ok(PresetName::Tpuv3Core),
            other => Err(Error::schema(MODULE, "preset", format!("unknown preset `{other}`"))),
        }
    }
}

/// Looks up a preset by name (`a100`, `mi210`, `tpuv3-core`).
pub fn preset_by_name(name: &str) -> Result<SystemDescriptor> {
    Ok(preset(name.parse()?))
}

/// Published platform descriptions. Register files, launch overheads and
/// link latencies are estimates.
pub fn preset(name: PresetName) -> SystemDescriptor {
    let link = |bw: f64| LinkParameters {
        latency_s: defaults::LINK_LATENCY_S,
        overhead_s: defaults::LINK_OVERHEAD_S,
        bandwidth_bytes_per_s: bw,
        max_payload_bytes: defaults::MAX_PAYLOAD_BYTES,
        flit_size_bytes: defaults::FLIT_SIZE_BYTES,
    };
    let core = |lanes: u32, vw: u32, dim: u32, local: u64, regs: u64| CoreDescriptor {
        lane_count: lanes,
        vector_width: vw,
        systolic_rows: dim,
        systolic_cols: dim,
        local_buffer_bytes: local,
        local_buffer_bytes_per_cycle: CoreDescriptor::default_local_bandwidth(lanes, vw, dim, dim),
        register_file_bytes_per_lane: regs,
        transcendental_cycles: defaults::TRANSCENDENTAL_CYCLES,
        divide_cycles: defaults::DIVIDE_CYCLES,
    };
    match name {
        PresetName::A100 => SystemDescriptor {
            devices: 1,
            topology: Topology::Ring,
            interconnect: link(600e9),
            device: DeviceDescriptor {
                frequency_hz: 1410e6,
                core_count: 108,
                global_buffer_bytes: 40 * MIB,
                global_buffer_bytes_per_cycle: 5120.0,
                memory_bandwidth_bytes_per_s: 2e12,
                memory_capacity_bytes: 80 * GIB,
                memory_protocol: MemoryProtocol::Hbm2e,
                kernel_launch_overhead_s: defaults::KERNEL_LAUNCH_OVERHEAD_S,
                core: core(4, 32, 16, 192 * KIB, defaults::REGISTER_FILE_BYTES_PER_LANE),
            },
        },
        PresetName::Mi210 => SystemDescriptor {
            devices: 1,
            topology: Topology::Ring,
            interconnect: link(300e9),
            device: DeviceDescriptor {
                frequency_hz: 1700e6,
                core_count: 104,
                global_buffer_bytes: 8 * MIB,
                global_buffer_bytes_per_cycle: 4096.0,
                memory_bandwidth_bytes_per_s: 1.6e12,
                memory_capacity_bytes: 64 * GIB,
                memory_protocol: MemoryProtocol::Hbm2e,
                kernel_launch_overhead_s: defaults::KERNEL_LAUNCH_OVERHEAD_S,
                core: core(4, 16, 16, 80 * KIB, 128 * KIB),
            },
        },
        PresetName::Tpuv3Core => SystemDescriptor {
            devices: 1,
            topology: Topology::Ring,
            interconnect: link(162.5e9),
            device: DeviceDescriptor {
                frequency_hz: 940e6,
                core_count: 2,
                global_buffer_bytes: 16384 * MIB,
                global_buffer_bytes_per_cycle: 490.0,
                memory_bandwidth_bytes_per_s: 0.0,
                memory_capacity_bytes: 0,
                memory_protocol: MemoryProtocol::None,
                kernel_launch_overhead_s: defaults::KERNEL_LAUNCH_OVERHEAD_S,
                core: core(1, 4 * 128, 128, 8192 * KIB, 4 * MIB),
            },
        },
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    system: SystemSection,
    device: Option<DeviceSection>,
    core: Option<CoreSection>,
    lane: Option<LaneSection>,
    interconnect: Option<InterconnectSection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    devices: Option<u32>,
    topology: Option<Topology>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSection {
    frequency_hz: Option<f64>,
    core_count: Option<u32>,
    global_buffer_bytes: Option<u64>,
    global_buffer_bytes_per_cycle: Option<f64>,
    memory_protocol: Option<MemoryProtocol>,
    memory_bandwidth_bytes_per_s: Option<f64>,
    memory_capacity_bytes: Option<u64>,
    kernel_launch_overhead_s: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoreSection {
    lane_count: Option<u32>,
    local_buffer_bytes: Option<u64>,
    local_buffer_bytes_per_cycle: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneSection {
    vector_width: Option<u32>,
    systolic_rows: Option<u32>,
    systolic_cols: Option<u32>,
    register_file_bytes: Option<u64>,
    transcendental_cycles: Option<u32>,
    divide_cycles: Option<u32>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterconnectSection {
    latency_s: Option<f64>,
    overhead_s: Option<f64>,
    bandwidth_bytes_per_s: Option<f64>,
    max_payload_bytes: Option<u64>,
    flit_size_bytes: Option<u64>,
}

fn required<T>(section: &str, field: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| Error::schema(MODULE, format!("{section}.{field}"), "required field is missing"))
}

fn section<T>(name: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| Error::schema(MODULE, name, "required section is missing"))
}

impl Document {
    fn build(self) -> Result<SystemDescriptor> {
        let dev = section("device", self.device)?;
        let core = section("core", self.core)?;
        let lane = section("lane", self.lane)?;
        let link = section("interconnect", self.interconnect)?;

        let memory_protocol = dev.memory_protocol.unwrap_or(MemoryProtocol::Hbm2e);
        let (memory_bandwidth, memory_capacity) = if memory_protocol == MemoryProtocol::None {
            (
                dev.memory_bandwidth_bytes_per_s.unwrap_or(0.0),
                dev.memory_capacity_bytes.unwrap_or(0),
            )
        } else {
            (
                required(
                    "device",
                    "memory_bandwidth_bytes_per_s",
                    dev.memory_bandwidth_bytes_per_s,
                )?,
                required("device", "memory_capacity_bytes", dev.memory_capacity_bytes)?,
            )
        };

        let lane_count = required("core", "lane_count", core.lane_count)?;
        let vector_width = required("lane", "vector_width", lane.vector_width)?;
        let rows = required("lane", "systolic_rows", lane.systolic_rows)?;
        let cols = required("lane", "systolic_cols", lane.systolic_cols)?;

        Ok(SystemDescriptor {
            devices: self.system.devices.unwrap_or(1),
            topology: self.system.topology.unwrap_or(Topology::Ring),
            interconnect: LinkParameters {
                latency_s: link.latency_s.unwrap_or(defaults::LINK_LATENCY_S),
                overhead_s: link.overhead_s.unwrap_or(defaults::LINK_OVERHEAD_S),
                bandwidth_bytes_per_s: required("interconnect", "bandwidth_bytes_per_s", link.bandwidth_bytes_per_s)?,
                max_payload_bytes: link.max_payload_bytes.unwrap_or(defaults::MAX_PAYLOAD_BYTES),
                flit_size_bytes: link.flit_size_bytes.unwrap_or(defaults::FLIT_SIZE_BYTES),
            },
            device: DeviceDescriptor {
                frequency_hz: required("device", "frequency_hz", dev.frequency_hz)?,
                core_count: required("device", "core_count", dev.core_count)?,
                global_buffer_bytes: required("device", "global_buffer_bytes", dev.global_buffer_bytes)?,
                global_buffer_bytes_per_cycle: required(
                    "device",
                    "global_buffer_bytes_per_cycle",
                    dev.global_buffer_bytes_per_cycle,
                )?,
                memory_bandwidth_bytes_per_s: memory_bandwidth,
                memory_capacity_bytes: memory_capacity,
                memory_protocol,
                kernel_launch_overhead_s: dev
                    .kernel_launch_overhead_s
                    .unwrap_or(defaults::KERNEL_LAUNCH_OVERHEAD_S),
                core: CoreDescriptor {
                    lane_count,
                    vector_width,
                    systolic_rows: rows,
                    systolic_cols: cols,
                    local_buffer_bytes: required("core", "local_buffer_bytes", core.local_buffer_bytes)?,
                    local_buffer_bytes_per_cycle: core.local_buffer_bytes_per_cycle.unwrap_or_else(|| {
                        CoreDescriptor::default_local_bandwidth(lane_count, vector_width, rows, cols)
                    }),
                    register_file_bytes_per_lane: lane
                        .register_file_bytes
                        .unwrap_or(defaults::REGISTER_FILE_BYTES_PER_LANE),
                    transcendental_cycles: lane.transcendental_cycles.unwrap_or(defaults::TRANSCENDENTAL_CYCLES),
                    divide_cycles: lane.divide_cycles.unwrap_or(defaults::DIVIDE_CYCLES),
                },
            },
        })
    }
}

impl From<&SystemDescriptor> for Document {
    fn from(s: &SystemDescriptor) -> Self {
        let d = &s.device;
        let c = &d.core;
        let l = &s.interconnect;
        Document {
            system: SystemSection {
                devices: Some(s.devices),
                topology: Some(s.topology),
            },
            device: Some(DeviceSection {
                frequency_hz: Some(d.frequency_hz),
                core_count: Some(d.core_count),
                global_buffer_bytes: Some(d.global_buffer_bytes),
                global_buffer_bytes_per_cycle: Some(d.global_buffer_bytes_per_cycle),
                memory_protocol: Some(d.memory_protocol),
                memory_bandwidth_bytes_per_s: Some(d.memory_bandwidth_bytes_per_s),
                memory_capacity_bytes: Some(d.memory_capacity_bytes),
                kernel_launch_overhead_s: Some(d.kernel_launch_overhead_s),
            }),
            core: Some(CoreSection {
                lane_count: Some(c.lane_count),
                local_buffer_bytes: Some(c.local_buffer_bytes),
                local_buffer_bytes_per_cycle: Some(c.local_buffer_bytes_per_cycle),
            }),
            lane: Some(LaneSection {
                vector_width: Some(c.vector_width),
                systolic_rows: Some(c.systolic_rows),
                systolic_cols: Some(c.systolic_cols),
                register_file_bytes: Some(c.register_file_bytes_per_lane),
                transcendental_cycles: Some(c.transcendental_cycles),
                divide_cycles: Some(c.divide_cycles),
            }),
            interconnect: Some(InterconnectSection {
                latency_s: Some(l.latency_s),
                overhead_s: Some(l.overhead_s),
                bandwidth_bytes_per_s: Some(l.bandwidth_bytes_per_s),
                max_payload_bytes: Some(l.max_payload_bytes),
                flit_size_bytes: Some(l.flit_size_bytes),
            }),
        }
    }
}
