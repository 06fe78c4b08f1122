//! Die area from component densities, overhead calibration against reference
//! dies, and die/memory cost.
//!
//! All logic and SRAM areas are quoted at a reference process node and
//! multiplied by `node_scale_factor`; PHY areas are not scaled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::{CoreDescriptor, MemoryProtocol, SystemDescriptor, GIB};

const MODULE: &str = "areacost";

/// Bandwidth and area of one physical channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub bandwidth_bytes_per_s: f64,
    pub phy_mm2: f64,
    pub controller_mm2: f64,
}

/// `area = k × bits^b × ports^a` per lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegfileModel {
    pub k: f64,
    pub bits_exponent: f64,
    pub ports_exponent: f64,
    pub ports: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AreaParams {
    pub systolic_mm2_per_pe: f64,
    pub vector_mm2_per_lane_width: f64,
    pub regfile: RegfileModel,
    /// `(capacity KiB, mm² per KiB)` points, interpolated linearly in capacity.
    pub sram_mm2_per_kb: Vec<(f64, f64)>,
    pub hbm2e_channel: ChannelParams,
    pub ddr_channel: ChannelParams,
    pub interconnect_channel: ChannelParams,
    pub node_scale_factor: f64,
    /// Per lane and per unit of scheduler width.
    pub per_lane_overhead_mm2: f64,
    pub per_core_overhead_mm2: f64,
    /// Defaults to the lane vector width.
    pub scheduler_width: Option<u32>,
}

impl Default for AreaParams {
    fn default() -> Self {
        AreaParams {
            systolic_mm2_per_pe: 0.001,
            vector_mm2_per_lane_width: 0.004,
            regfile: RegfileModel {
                k: 6.4e-8,
                bits_exponent: 1.0,
                ports_exponent: 1.0,
                ports: 3.0,
            },
            sram_mm2_per_kb: vec![(32.0, 0.0030), (1024.0, 0.0025), (65536.0, 0.0022)],
            hbm2e_channel: ChannelParams {
                bandwidth_bytes_per_s: 409.6e9,
                phy_mm2: 10.0,
                controller_mm2: 5.0,
            },
            ddr_channel: ChannelParams {
                bandwidth_bytes_per_s: 3.9e9,
                phy_mm2: 0.3,
                controller_mm2: 0.15,
            },
            interconnect_channel: ChannelParams {
                bandwidth_bytes_per_s: 50e9,
                phy_mm2: 2.5,
                controller_mm2: 1.5,
            },
            node_scale_factor: 1.0,
            per_lane_overhead_mm2: 0.0,
            per_core_overhead_mm2: 0.0,
            scheduler_width: None,
        }
    }
}

impl AreaParams {
    /// Every coefficient zero.
    pub fn zero() -> Self {
        let ch = ChannelParams {
            bandwidth_bytes_per_s: 1.0,
            phy_mm2: 0.0,
            controller_mm2: 0.0,
        };
        AreaParams {
            systolic_mm2_per_pe: 0.0,
            vector_mm2_per_lane_width: 0.0,
            regfile: RegfileModel {
                k: 0.0,
                ..AreaParams::default().regfile
            },
            sram_mm2_per_kb: vec![(1.0, 0.0)],
            hbm2e_channel: ch,
            ddr_channel: ch,
            interconnect_channel: ch,
            node_scale_factor: 1.0,
            per_lane_overhead_mm2: 0.0,
            per_core_overhead_mm2: 0.0,
            scheduler_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut scalars = vec![
            ("systolic_mm2_per_pe", self.systolic_mm2_per_pe),
            ("vector_mm2_per_lane_width", self.vector_mm2_per_lane_width),
            ("regfile.k", self.regfile.k),
            ("regfile.ports", self.regfile.ports),
            ("per_lane_overhead_mm2", self.per_lane_overhead_mm2),
            ("per_core_overhead_mm2", self.per_core_overhead_mm2),
        ];
        for (name, ch) in [
            ("hbm2e_channel", &self.hbm2e_channel),
            ("ddr_channel", &self.ddr_channel),
            ("interconnect_channel", &self.interconnect_channel),
        ] {
            scalars.push((name, ch.phy_mm2));
            scalars.push((name, ch.controller_mm2));
            if !(ch.bandwidth_bytes_per_s > 0.0) {
                return Err(Error::schema(
                    MODULE,
                    format!("{name}.bandwidth_bytes_per_s"),
                    "must be > 0",
                ));
            }
        }
        for (name, v) in scalars {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::schema(MODULE, name, "must be a finite value >= 0"));
            }
        }
        if !(self.node_scale_factor > 0.0) {
            return Err(Error::schema(MODULE, "node_scale_factor", "must be > 0"));
        }
        if self.sram_mm2_per_kb.is_empty() {
            return Err(Error::schema(MODULE, "sram_mm2_per_kb", "needs at least one point"));
        }
        if self.sram_mm2_per_kb.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::schema(
                MODULE,
                "sram_mm2_per_kb",
                "capacities must be strictly increasing",
            ));
        }
        if self.sram_mm2_per_kb.iter().any(|&(kb, d)| !(kb > 0.0) || !(d >= 0.0)) {
            return Err(Error::schema(
                MODULE,
                "sram_mm2_per_kb",
                "capacities must be > 0 and densities >= 0",
            ));
        }
        Ok(())
    }

    fn sram_density(&self, kb: f64) -> f64 {
        let pts = &self.sram_mm2_per_kb;
        if kb <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if kb <= x1 {
                return y0 + (kb - x0) / (x1 - x0) * (y1 - y0);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Unscaled SRAM area of `bytes`.
    pub fn sram_mm2(&self, bytes: u64) -> f64 {
        let kb = bytes as f64 / 1024.0;
        kb * self.sram_density(kb)
    }

    fn regfile_mm2(&self, bytes: u64) -> f64 {
        let r = &self.regfile;
        let bits = (bytes * 8) as f64;
        r.k * bits.powf(r.bits_exponent) * r.ports.powf(r.ports_exponent)
    }

    fn scheduler_width_for(&self, core: &CoreDescriptor) -> f64 {
        self.scheduler_width.unwrap_or(core.vector_width) as f64
    }
}

pub fn parse_area_params(text: &str) -> Result<AreaParams> {
    let p: AreaParams = toml::from_str(text).map_err(|e| crate::hwdesc::toml_error(MODULE, &e))?;
    p.validate()?;
    Ok(p)
}

pub fn load_area_params(path: &std::path::Path) -> Result<AreaParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_area_params(&text)
}

/// Area per component in mm².
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AreaBreakdown {
    pub systolic: f64,
    pub vector: f64,
    pub regfile: f64,
    pub local_buffers: f64,
    pub global_buffer: f64,
    pub memory_phy: f64,
    pub memory_controller: f64,
    pub interconnect_phy: f64,
    pub interconnect_controller: f64,
    pub lane_overhead: f64,
    pub core_overhead: f64,
}

impl AreaBreakdown {
    pub fn entries(&self) -> [(&'static str, f64); 11] {
        [
            ("systolic", self.systolic),
            ("vector", self.vector),
            ("regfile", self.regfile),
            ("local_buffers", self.local_buffers),
            ("global_buffer", self.global_buffer),
            ("memory_phy", self.memory_phy),
            ("memory_controller", self.memory_controller),
            ("interconnect_phy", self.interconnect_phy),
            ("interconnect_controller", self.interconnect_controller),
            ("lane_overhead", self.lane_overhead),
            ("core_overhead", self.core_overhead),
        ]
    }

    pub fn total(&self) -> f64 {
        self.entries().iter().map(|(_, v)| v).sum()
    }

    fn scaled(self, f: f64) -> Self {
        AreaBreakdown {
            systolic: self.systolic * f,
            vector: self.vector * f,
            regfile: self.regfile * f,
            local_buffers: self.local_buffers * f,
            global_buffer: self.global_buffer * f,
            memory_phy: self.memory_phy * f,
            memory_controller: self.memory_controller * f,
            interconnect_phy: self.interconnect_phy * f,
            interconnect_controller: self.interconnect_controller * f,
            lane_overhead: self.lane_overhead * f,
            core_overhead: self.core_overhead * f,
        }
    }
}

/// One core: lane-proportional logic, local buffer and per-core overhead.
pub fn core_area(core: &CoreDescriptor, p: &AreaParams) -> AreaBreakdown {
    let lanes = core.lane_count as f64;
    let pes = (core.systolic_rows * core.systolic_cols) as f64;
    let s = p.node_scale_factor;
    AreaBreakdown {
        systolic: lanes * pes * p.systolic_mm2_per_pe * s,
        vector: lanes * core.vector_width as f64 * p.vector_mm2_per_lane_width * s,
        regfile: lanes * p.regfile_mm2(core.register_file_bytes_per_lane) * s,
        local_buffers: p.sram_mm2(core.local_buffer_bytes) * s,
        lane_overhead: lanes * p.scheduler_width_for(core) * p.per_lane_overhead_mm2 * s,
        core_overhead: p.per_core_overhead_mm2 * s,
        ..AreaBreakdown::default()
    }
}

fn channels(bandwidth: f64, per_channel: f64) -> f64 {
    if bandwidth <= 0.0 {
        0.0
    } else {
        (bandwidth / per_channel).ceil()
    }
}

/// Whole die: cores, global buffer, memory and interconnect interfaces.
pub fn die_area(system: &SystemDescriptor, p: &AreaParams) -> AreaBreakdown {
    let device = &system.device;
    let s = p.node_scale_factor;
    let mut a = core_area(&device.core, p).scaled(device.core_count as f64);
    a.global_buffer = p.sram_mm2(device.global_buffer_bytes) * s;
    let mem = match device.memory_protocol {
        MemoryProtocol::Hbm2e => Some(p.hbm2e_channel),
        MemoryProtocol::Ddr => Some(p.ddr_channel),
        MemoryProtocol::None => None,
    };
    if let Some(ch) = mem {
        let n = channels(device.memory_bandwidth_bytes_per_s, ch.bandwidth_bytes_per_s);
        a.memory_phy = n * ch.phy_mm2;
        a.memory_controller = n * ch.controller_mm2 * s;
    }
    let ch = p.interconnect_channel;
    let n = channels(system.interconnect.bandwidth_bytes_per_s, ch.bandwidth_bytes_per_s);
    a.interconnect_phy = n * ch.phy_mm2;
    a.interconnect_controller = n * ch.controller_mm2 * s;
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub per_lane_overhead_mm2: f64,
    pub per_core_overhead_mm2: f64,
    /// Reference minus modeled area before overheads.
    pub residual_mm2: f64,
    pub diagnostic: Option<String>,
}

/// One reference die for calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReference {
    pub system: SystemDescriptor,
    pub reference_total_mm2: f64,
    pub scheduler_width: u32,
}

/// Splits the residual between the modeled die (without overheads) and
/// `reference_total_mm2`: `lane_fraction` of it per lane per scheduler-width
/// unit, the rest per core.
pub fn calibrate_overheads(
    system: &SystemDescriptor,
    p_without_overheads: &AreaParams,
    reference_total_mm2: f64,
    scheduler_width: u32,
    lane_fraction: f64,
) -> Calibration {
    let mut p = p_without_overheads.clone();
    p.per_lane_overhead_mm2 = 0.0;
    p.per_core_overhead_mm2 = 0.0;
    let modeled = die_area(system, &p).total();
    let residual = reference_total_mm2 - modeled;
    let device = &system.device;
    let cores = device.core_count as f64;
    let lane_units = cores * device.core.lane_count as f64 * scheduler_width as f64;
    let s = p.node_scale_factor;
    let zero = |msg: String| Calibration {
        per_lane_overhead_mm2: 0.0,
        per_core_overhead_mm2: 0.0,
        residual_mm2: residual,
        diagnostic: Some(msg),
    };
    if residual < 0.0 {
        return zero(format!(
            "modeled area {modeled:.3} mm² exceeds reference {reference_total_mm2:.3} mm²; overheads clamped to 0"
        ));
    }
    if cores == 0.0 || lane_units == 0.0 {
        return zero("no cores or lanes to carry the residual; overheads set to 0".to_string());
    }
    let f = lane_fraction.clamp(0.0, 1.0);
    Calibration {
        per_lane_overhead_mm2: f * residual / (lane_units * s),
        per_core_overhead_mm2: (1.0 - f) * residual / (cores * s),
        residual_mm2: residual,
        diagnostic: None,
    }
}

/// Mean of the per-reference overheads.
pub fn calibrate_against(
    references: &[CalibrationReference],
    p_without_overheads: &AreaParams,
    lane_fraction: f64,
) -> Result<Calibration> {
    if references.is_empty() {
        return Err(Error::invariant(MODULE, "calibration needs at least one reference die"));
    }
    let cals: Vec<Calibration> = references
        .iter()
        .map(|r| {
            calibrate_overheads(
                &r.system,
                p_without_overheads,
                r.reference_total_mm2,
                r.scheduler_width,
                lane_fraction,
            )
        })
        .collect();
    let n = cals.len() as f64;
    let diagnostics: Vec<String> = cals.iter().filter_map(|c| c.diagnostic.clone()).collect();
    Ok(Calibration {
        per_lane_overhead_mm2: cals.iter().map(|c| c.per_lane_overhead_mm2).sum::<f64>() / n,
        per_core_overhead_mm2: cals.iter().map(|c| c.per_core_overhead_mm2).sum::<f64>() / n,
        residual_mm2: cals.iter().map(|c| c.residual_mm2).sum::<f64>() / n,
        diagnostic: if diagnostics.is_empty() {
            None
        } else {
            Some(diagnostics.join("; "))
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaferParams {
    pub wafer_diameter_mm: f64,
    pub wafer_cost_usd: f64,
    pub defect_density_per_mm2: f64,
    pub yield_alpha: f64,
}

impl Default for WaferParams {
    fn default() -> Self {
        WaferParams {
            wafer_diameter_mm: 300.0,
            wafer_cost_usd: 4513.0,
            defect_density_per_mm2: 0.001,
            yield_alpha: 3.0,
        }
    }
}

impl WaferParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wafer_diameter_mm > 0.0) {
            return Err(Error::schema(MODULE, "wafer_diameter_mm", "must be > 0"));
        }
        if !(self.wafer_cost_usd >= 0.0) {
            return Err(Error::schema(MODULE, "wafer_cost_usd", "must be >= 0"));
        }
        if !(self.defect_density_per_mm2 >= 0.0) || !(self.yield_alpha > 0.0) {
            return Err(Error::schema(
                MODULE,
                "defect_density_per_mm2",
                "needs D0 >= 0 and yield_alpha > 0",
            ));
        }
        Ok(())
    }
}

/// `floor(π(d/2)²/A − πd/√(2A))`.
pub fn dies_per_wafer(area_mm2: f64, w: &WaferParams) -> u64 {
    let d = w.wafer_diameter_mm;
    let pi = std::f64::consts::PI;
    let n = pi * (d / 2.0).powi(2) / area_mm2 - pi * d / (2.0 * area_mm2).sqrt();
    if n > 0.0 {
        n.floor() as u64
    } else {
        0
    }
}

/// Negative-binomial yield `(1 + A·D0/α)^(−α)`.
pub fn die_yield(area_mm2: f64, w: &WaferParams) -> f64 {
    (1.0 + area_mm2 * w.defect_density_per_mm2 / w.yield_alpha).powf(-w.yield_alpha)
}

pub fn die_cost(area_mm2: f64, w: &WaferParams) -> Result<f64> {
    w.validate()?;
    if !(area_mm2 > 0.0) {
        return Err(Error::invariant(MODULE, "die area must be > 0"));
    }
    let dies = dies_per_wafer(area_mm2, w);
    if dies == 0 {
        return Err(Error::infeasible(
            MODULE,
            format!("a {area_mm2} mm² die does not fit a {} mm wafer", w.wafer_diameter_mm),
        ));
    }
    Ok(w.wafer_cost_usd / (dies as f64 * die_yield(area_mm2, w)))
}

/// USD per GiB, keyed by memory protocol name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, f64>);

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable(BTreeMap::from([
            ("hbm2e".to_string(), 7.0),
            ("ddr".to_string(), 154.0 / 512.0),
            ("none".to_string(), 0.0),
        ]))
    }
}

pub fn memory_cost(capacity_gb: f64, protocol: MemoryProtocol, prices: &PriceTable) -> Result<f64> {
    let price = prices.0.get(protocol.as_str()).ok_or_else(|| {
        Error::schema(
            MODULE,
            format!("prices.{}", protocol.as_str()),
            "memory protocol has no price",
        )
    })?;
    Ok(capacity_gb * price)
}

/// Area breakdown plus die, memory and total cost. There is deliberately no
/// IP, mask or packaging term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaCostReport {
    pub breakdown: AreaBreakdown,
    pub total_mm2: f64,
    pub die_cost_usd: f64,
    pub memory_cost_usd: f64,
    pub total_cost_usd: f64,
}

pub fn area_cost_report(
    system: &SystemDescriptor,
    p: &AreaParams,
    w: &WaferParams,
    prices: &PriceTable,
) -> Result<AreaCostReport> {
    p.validate()?;
    let breakdown = die_area(system, p);
    let total_mm2 = breakdown.total();
    let die_cost_usd = if total_mm2 > 0.0 { die_cost(total_mm2, w)? } else { 0.0 };
    let device = &system.device;
    let gb = if device.has_main_memory() {
        device.memory_capacity_bytes as f64 / GIB as f64
    } else {
        0.0
    };
    let memory_cost_usd = memory_cost(gb, device.memory_protocol, prices)?;
    Ok(AreaCostReport {
        breakdown,
        total_mm2,
        die_cost_usd,
        memory_cost_usd,
        total_cost_usd: die_cost_usd + memory_cost_usd,
    })
}
