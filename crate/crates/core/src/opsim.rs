//! Tile-by-tile timing of one operator on one device.
//!
//! Three levels are modeled: main memory ↔ global buffer, global buffer ↔
//! core local buffers, and local buffer ↔ lanes. Tiles that overhang a matrix
//! edge are timed as full subtiles. Data traffic at the main-memory level is
//! counted with the real edge sizes.
//!
//! Step composition at a level is `io + compute` per step, or with double
//! buffering `Σ max(io, compute)` plus one fill/drain term `min(io, compute)`
//! of the first step.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::{peak_compute_throughput, peak_vector_throughput, CoreDescriptor, DeviceDescriptor};
use crate::systolic::{CycleMemoTable, SystolicQuery};
use crate::workload::{OpShape, OperatorSpec};

const MODULE: &str = "opsim";

/// compare, subtract, exponential, add, divide
pub const SOFTMAX_OPS_PER_ELEMENT: u64 = 5;
/// mean: add; variance: subtract, multiply, add; normalize: subtract, multiply, scale, shift
pub const LAYERNORM_OPS_PER_ELEMENT: u64 = 8;
/// tanh approximation: add, four multiplies, tanh
pub const GELU_OPS_PER_ELEMENT: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

impl Tile {
    pub const fn new(m: u64, k: u64, n: u64) -> Self {
        Tile { m, k, n }
    }

    fn matmul_footprint(&self) -> u64 {
        self.m * self.k + self.k * self.n + self.m * self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleScheme {
    /// Cores own distinct output subtiles; shared operand reads are merged.
    ColumnPartition,
    /// Cores split the reduction dimension of one output subtile.
    CooperativeReduction,
}

/// Tiling at each memory level plus scheduling options. For row-wise and
/// element-wise operators the `k` extents are 1 and the lane tile is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappingPlan {
    pub global_tile: Tile,
    pub core_subtile: Tile,
    pub lane_tile: Tile,
    pub scheme: ScheduleScheme,
    pub double_buffer_global: bool,
    pub double_buffer_local: bool,
}

impl MappingPlan {
    /// Plan with identical tiles at every level, no double buffering.
    pub fn uniform(tile: Tile) -> Self {
        MappingPlan {
            global_tile: tile,
            core_subtile: tile,
            lane_tile: tile,
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: false,
            double_buffer_local: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSeconds {
    pub main_global: f64,
    pub global_local: f64,
    pub local_lanes: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelBytes {
    pub main_global: u64,
    pub global_local: u64,
    pub local_lanes: u64,
}

/// Timing of one operator. `io_s` and `compute_s` are summed along the
/// critical path, so `total_s` is at least each of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub total_s: f64,
    pub io_s: LevelSeconds,
    pub compute_s: f64,
    pub launch_overhead_s: f64,
    pub bytes_moved: LevelBytes,
    pub flops_executed: u64,
    pub utilization: f64,
}

impl LatencyReport {
    fn overhead_only(device: &DeviceDescriptor) -> Self {
        LatencyReport {
            total_s: device.kernel_launch_overhead_s,
            io_s: LevelSeconds::default(),
            compute_s: 0.0,
            launch_overhead_s: device.kernel_launch_overhead_s,
            bytes_moved: LevelBytes::default(),
            flops_executed: 0,
            utilization: 0.0,
        }
    }
}

/// Requirement vs capacity at one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelFit {
    pub level: &'static str,
    pub required_bytes: u64,
    pub capacity_bytes: u64,
}

impl LevelFit {
    pub fn fits(&self) -> bool {
        self.required_bytes <= self.capacity_bytes
    }

    pub fn overflow_bytes(&self) -> u64 {
        self.required_bytes.saturating_sub(self.capacity_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FitVerdict {
    pub levels: Vec<LevelFit>,
    /// Set when the tile hierarchy itself is malformed.
    pub shape_error: Option<String>,
}

impl FitVerdict {
    pub fn fits(&self) -> bool {
        self.shape_error.is_none() && self.levels.iter().all(LevelFit::fits)
    }

    pub fn level(&self, name: &str) -> Option<&LevelFit> {
        self.levels.iter().find(|l| l.level == name)
    }

    fn describe(&self) -> String {
        if let Some(e) = &self.shape_error {
            return e.clone();
        }
        self.levels
            .iter()
            .filter(|l| !l.fits())
            .map(|l| {
                format!(
                    "{} needs {} bytes, has {} (overflow {})",
                    l.level,
                    l.required_bytes,
                    l.capacity_bytes,
                    l.overflow_bytes()
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn check_hierarchy(plan: &MappingPlan) -> Option<String> {
    let (g, s, l) = (plan.global_tile, plan.core_subtile, plan.lane_tile);
    for t in [g, s, l] {
        if t.m == 0 || t.k == 0 || t.n == 0 {
            return Some(format!("tile extents must be >= 1: {t:?}"));
        }
    }
    if s.m > g.m || s.k > g.k || s.n > g.n {
        return Some(format!("core subtile {s:?} exceeds global tile {g:?}"));
    }
    if l.m > s.m || l.k > s.k || l.n > s.n {
        return Some(format!("lane tile {l:?} exceeds core subtile {s:?}"));
    }
    None
}

/// Per-level buffer requirement of a plan. Double buffering doubles the
/// footprint at its level.
pub fn buffer_fit(device: &DeviceDescriptor, spec: &OperatorSpec, plan: &MappingPlan) -> FitVerdict {
    let b = spec.bytes_per_element;
    let dbl = |on: bool| if on { 2 } else { 1 };
    let g = plan.global_tile;
    let s = plan.core_subtile;
    let l = plan.lane_tile;
    let mut levels = Vec::with_capacity(3);
    let shape_error = check_hierarchy(plan);
    match spec.shape {
        OpShape::Matmul { .. } => {
            levels.push(LevelFit {
                level: "global",
                required_bytes: g.matmul_footprint() * b * dbl(plan.double_buffer_global),
                capacity_bytes: device.global_buffer_bytes,
            });
            levels.push(LevelFit {
                level: "local",
                required_bytes: s.matmul_footprint() * b * dbl(plan.double_buffer_local),
                capacity_bytes: device.core.local_buffer_bytes,
            });
            levels.push(LevelFit {
                level: "lane",
                required_bytes: l.matmul_footprint() * b,
                capacity_bytes: device.core.register_file_bytes_per_lane,
            });
        }
        OpShape::Softmax { .. } | OpShape::LayerNorm { .. } | OpShape::Gelu { .. } => {
            // input and output tiles
            levels.push(LevelFit {
                level: "global",
                required_bytes: 2 * g.m * g.n * b * dbl(plan.double_buffer_global),
                capacity_bytes: device.global_buffer_bytes,
            });
            levels.push(LevelFit {
                level: "local",
                required_bytes: 2 * s.m * s.n * b * dbl(plan.double_buffer_local),
                capacity_bytes: device.core.local_buffer_bytes,
            });
        }
        OpShape::AllReduce { .. } | OpShape::P2p { .. } => {}
    }
    FitVerdict { levels, shape_error }
}

/// Test and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Merge identical global-buffer reads issued by cores of the same wave.
    pub merge_global_reads: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            merge_global_reads: true,
        }
    }
}

/// Owns the systolic memo table shared by all simulations.
#[derive(Debug, Default)]
pub struct Simulator {
    pub systolic: CycleMemoTable,
    pub options: SimOptions,
}

/// Time spent in one step at some level, split by activity.
#[derive(Debug, Clone, Copy, Default)]
struct Cost {
    cycles: f64,
    io_global: f64,
    io_lane: f64,
    compute: f64,
    bytes_global: u64,
    bytes_lane: u64,
}

impl Cost {
    fn scaled(self, times: u64) -> Cost {
        let t = times as f64;
        Cost {
            cycles: self.cycles * t,
            io_global: self.io_global * t,
            io_lane: self.io_lane * t,
            compute: self.compute * t,
            bytes_global: self.bytes_global * times,
            bytes_lane: self.bytes_lane * times,
        }
    }

    fn add(&mut self, o: Cost) {
        self.cycles += o.cycles;
        self.io_global += o.io_global;
        self.io_lane += o.io_lane;
        self.compute += o.compute;
        self.bytes_global += o.bytes_global;
        self.bytes_lane += o.bytes_lane;
    }
}

#[derive(Debug, Clone, Copy)]
struct LaneCost {
    cycles: f64,
    io: f64,
    compute: f64,
    bytes: u64,
}

fn checked_div(bytes: f64, bandwidth: f64, what: &str) -> Result<f64> {
    if bytes == 0.0 {
        Ok(0.0)
    } else if bandwidth > 0.0 {
        Ok(bytes / bandwidth)
    } else {
        Err(Error::infeasible(
            MODULE,
            format!("zero {what} bandwidth with nonzero traffic"),
        ))
    }
}

/// `n` identical steps.
fn steps_time(n: u64, io: f64, compute: f64, pipelined: bool) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if pipelined {
        n as f64 * io.max(compute) + io.min(compute)
    } else {
        n as f64 * (io + compute)
    }
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Splits `extent` into `(size, count)` classes of full tiles and one edge tile.
fn tile_classes(extent: u64, tile: u64) -> Vec<(u64, u64)> {
    let full = extent / tile;
    let edge = extent % tile;
    let mut v = Vec::with_capacity(2);
    if full > 0 {
        v.push((tile, full));
    }
    if edge > 0 {
        v.push((edge, 1));
    }
    v
}

/// Distinct rows and columns touched by items `[start, start + width)` of a
/// column-major `rows × cols` grid.
fn distinct_rows_cols(start: u64, width: u64, rows: u64) -> (u64, u64) {
    let end = start + width;
    let di = width.min(rows);
    let dj = (end - 1) / rows - start / rows + 1;
    (di, dj)
}

impl Simulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: SimOptions) -> Self {
        Simulator {
            systolic: CycleMemoTable::new(),
            options,
        }
    }

    /// Dispatches on the operator kind. Communication operators are not
    /// device-local and are rejected here.
    pub fn simulate(
        &self,
        device: &DeviceDescriptor,
        spec: &OperatorSpec,
        plan: &MappingPlan,
    ) -> Result<LatencyReport> {
        match spec.shape {
            OpShape::Matmul { .. } => self.simulate_matmul(device, spec, plan),
            OpShape::Softmax { .. } | OpShape::LayerNorm { .. } | OpShape::Gelu { .. } => {
                self.simulate_vector_op(device, spec, plan)
            }
            OpShape::AllReduce { .. } | OpShape::P2p { .. } => Err(Error::invariant(
                MODULE,
                "communication operators are timed by netsim, not the device simulator",
            )),
        }
    }

    fn ensure_fits(&self, device: &DeviceDescriptor, spec: &OperatorSpec, plan: &MappingPlan) -> Result<()> {
        let verdict = buffer_fit(device, spec, plan);
        if verdict.fits() {
            Ok(())
        } else {
            Err(Error::infeasible(
                MODULE,
                format!("plan does not fit: {}", verdict.describe()),
            ))
        }
    }

    fn lane_matmul(&self, core: &CoreDescriptor, sub: Tile, lane: Tile, bpe: u64) -> Result<LaneCost> {
        let nm = sub.m.div_ceil(lane.m);
        let nn = sub.n.div_ceil(lane.n);
        let nk = sub.k.div_ceil(lane.k);
        let outputs = nm * nn;
        let lanes = core.lane_count as u64;
        let pass = self.systolic.lookup_or_compute(&SystolicQuery {
            rows: core.systolic_rows,
            cols: core.systolic_cols,
            tile_m: lane.m,
            tile_k: lane.k,
            tile_n: lane.n,
        }) as f64;
        let operand_bytes = (lane.m * lane.k + lane.k * lane.n) * bpe;
        let out_bytes = lane.m * lane.n * bpe;
        let bw = core.local_buffer_bytes_per_cycle;

        let k_split = if outputs < lanes { (lanes / outputs).min(nk) } else { 1 };
        if k_split <= 1 {
            let per_lane_bytes = nk * operand_bytes + 2 * out_bytes;
            let compute = nk as f64 * pass;
            let active_full = lanes.min(outputs);
            let mut cost = LaneCost {
                cycles: 0.0,
                io: 0.0,
                compute: 0.0,
                bytes: outputs * per_lane_bytes,
            };
            for (active, count) in [(active_full, outputs / active_full), (outputs % active_full, 1)] {
                if active == 0 || count == 0 {
                    continue;
                }
                let io = checked_div((active * per_lane_bytes) as f64, bw, "local buffer")?;
                cost.cycles += count as f64 * compute.max(io);
                cost.io += count as f64 * io;
                cost.compute += count as f64 * compute;
            }
            Ok(cost)
        } else {
            // Split K across idle lanes, then reduce partial outputs on the vector units.
            let chunks = nk.div_ceil(k_split);
            let reduce =
                ((k_split - 1) * lane.m * lane.n).div_ceil(k_split * core.vector_width as u64) + ceil_log2(k_split);
            let compute = chunks as f64 * pass + reduce as f64;
            let bytes = outputs * (nk * operand_bytes + 2 * out_bytes) + outputs * (k_split - 1) * 2 * out_bytes;
            let io = checked_div(bytes as f64, bw, "local buffer")?;
            Ok(LaneCost {
                cycles: compute.max(io),
                io,
                compute,
                bytes,
            })
        }
    }

    /// Core-level time for one global tile of extent `tile`.
    fn core_matmul(
        &self,
        device: &DeviceDescriptor,
        plan: &MappingPlan,
        tile: Tile,
        lane: &LaneCost,
        bpe: u64,
    ) -> Result<Cost> {
        let s = plan.core_subtile;
        let sm = tile.m.div_ceil(s.m);
        let sk = tile.k.div_ceil(s.k);
        let sn = tile.n.div_ceil(s.n);
        let cores = device.core_count as u64;
        let a_bytes = s.m * s.k * bpe;
        let b_bytes = s.k * s.n * bpe;
        let c_bytes = s.m * s.n * bpe;
        let gbw = device.global_buffer_bytes_per_cycle;
        let merge = self.options.merge_global_reads;
        let db = plan.double_buffer_local;

        let cooperative = plan.scheme == ScheduleScheme::CooperativeReduction && sk > 1;
        let group = if cooperative { cores.min(sk) } else { 1 };
        let concurrent = (cores / group).max(1);
        let steps = sk.div_ceil(group);
        let items = sm * sn;

        let mut total = Cost::default();
        let mut start = 0;
        // Waves with the same (width, distinct rows, distinct cols) cost the same.
        let mut waves: HashMap<(u64, u64, u64), u64> = HashMap::new();
        while start < items {
            let width = concurrent.min(items - start);
            let (di, dj) = distinct_rows_cols(start, width, sm);
            *waves.entry((width, di, dj)).or_default() += 1;
            start += width;
        }
        let mut waves: Vec<_> = waves.into_iter().collect();
        waves.sort_unstable();
        for ((width, di, dj), count) in waves {
            let step_bytes = if merge {
                group * (di * a_bytes + dj * b_bytes)
            } else {
                width * group * (a_bytes + b_bytes)
            };
            let io = checked_div(step_bytes as f64, gbw, "global buffer")?;
            let mut c = Cost {
                cycles: steps_time(steps, io, lane.cycles, db),
                io_global: steps as f64 * io,
                io_lane: steps as f64 * lane.io,
                compute: steps as f64 * lane.compute,
                bytes_global: steps * step_bytes,
                bytes_lane: width * group * steps * lane.bytes,
            };
            // Read the running C subtile and write it back.
            let mut c_traffic = 2 * width * c_bytes;
            if group > 1 {
                c_traffic += 2 * width * group * c_bytes;
                let adds = ((group - 1) * s.m * s.n)
                    .div_ceil(group * device.core.lane_count as u64 * device.core.vector_width as u64);
                let reduce = (adds + ceil_log2(group)) as f64;
                c.cycles += reduce;
                c.compute += reduce;
            }
            let c_io = checked_div(c_traffic as f64, gbw, "global buffer")?;
            c.cycles += c_io;
            c.io_global += c_io;
            c.bytes_global += c_traffic;
            total.add(c.scaled(count));
        }
        Ok(total)
    }

    pub fn simulate_matmul(
        &self,
        device: &DeviceDescriptor,
        spec: &OperatorSpec,
        plan: &MappingPlan,
    ) -> Result<LatencyReport> {
        spec.validate()?;
        let OpShape::Matmul { m, k, n, batch } = spec.shape else {
            return Err(Error::invariant(MODULE, "simulate_matmul needs a matmul spec"));
        };
        self.ensure_fits(device, spec, plan)?;
        let bpe = spec.bytes_per_element;
        let freq = device.frequency_hz;
        let g = plan.global_tile;
        let lane = self.lane_matmul(&device.core, plan.core_subtile, plan.lane_tile, bpe)?;

        let gk = k.div_ceil(g.k);
        let edge_k = k - (gk - 1) * g.k;
        // (extent, count, reads C, writes C)
        let k_classes: Vec<(u64, u64, bool, bool)> = if gk == 1 {
            vec![(edge_k, 1, true, true)]
        } else {
            let mut v = vec![(g.k, 1, true, false)];
            if gk > 2 {
                v.push((g.k, gk - 2, false, false));
            }
            v.push((edge_k, 1, false, true));
            v
        };
        let m_classes = tile_classes(m, g.m);
        let n_classes = tile_classes(n, g.n);

        let mut core_costs: HashMap<Tile, Cost> = HashMap::new();
        let mut total = 0.0;
        let mut first_fill = None;
        let mut io_main = 0.0;
        let mut bytes_main = 0u64;
        let mut inner = Cost::default();
        for &(tm, cm) in &m_classes {
            for &(tn, cn) in &n_classes {
                for &(tk, ck, read_c, write_c) in &k_classes {
                    let count = cm * cn * ck * batch;
                    let tile = Tile::new(tm, tk, tn);
                    let core = match core_costs.get(&tile) {
                        Some(c) => *c,
                        None => {
                            let c = self.core_matmul(device, plan, tile, &lane, bpe)?;
                            core_costs.insert(tile, c);
                            c
                        }
                    };
                    let mut bytes = (tm * tk + tk * tn) * bpe;
                    if read_c {
                        bytes += tm * tn * bpe;
                    }
                    if write_c {
                        bytes += tm * tn * bpe;
                    }
                    let io = if device.has_main_memory() {
                        checked_div(bytes as f64, device.memory_bandwidth_bytes_per_s, "main memory")?
                    } else {
                        0.0
                    };
                    let comp = core.cycles / freq;
                    if plan.double_buffer_global {
                        total += count as f64 * io.max(comp);
                        first_fill.get_or_insert(io.min(comp));
                    } else {
                        total += count as f64 * (io + comp);
                    }
                    io_main += count as f64 * io;
                    if device.has_main_memory() {
                        bytes_main += count * bytes;
                    }
                    inner.add(core.scaled(count));
                }
            }
        }
        total += first_fill.unwrap_or(0.0);
        let overhead = device.kernel_launch_overhead_s;
        total += overhead;
        let flops = spec.flops();
        Ok(LatencyReport {
            total_s: total,
            io_s: LevelSeconds {
                main_global: io_main,
                global_local: inner.io_global / freq,
                local_lanes: inner.io_lane / freq,
            },
            compute_s: inner.compute / freq,
            launch_overhead_s: overhead,
            bytes_moved: LevelBytes {
                main_global: bytes_main,
                global_local: inner.bytes_global,
                local_lanes: inner.bytes_lane,
            },
            flops_executed: flops,
            utilization: (flops as f64 / (total * peak_compute_throughput(device))).clamp(0.0, 1.0),
        })
    }

    pub fn simulate_vector_op(
        &self,
        device: &DeviceDescriptor,
        spec: &OperatorSpec,
        plan: &MappingPlan,
    ) -> Result<LatencyReport> {
        let kind = VectorKind::of(spec)?;
        if let OpShape::Gelu { elements: 0 } = spec.shape {
            return Ok(LatencyReport::overhead_only(device));
        }
        spec.validate()?;
        self.ensure_fits(device, spec, plan)?;
        let (m, n) = kind.rows_cols(spec);
        let bpe = spec.bytes_per_element;
        let freq = device.frequency_hz;
        let g = plan.global_tile;
        let passes = kind.passes(&device.core);
        let all_passes: Vec<usize> = (0..passes.len()).collect();
        let resident_global = g.n >= n;

        // Each visit of a global tile runs a set of passes; a row that does not
        // fit the global tile is streamed through main memory once per pass.
        let visits: Vec<Vec<usize>> = if resident_global {
            vec![all_passes.clone()]
        } else {
            all_passes.iter().map(|&p| vec![p]).collect()
        };

        let mut total = 0.0;
        let mut first_fill = None;
        let mut io_main = 0.0;
        let mut bytes_main = 0u64;
        let mut inner = Cost::default();
        let mut core_costs: HashMap<(u64, u64, usize), Cost> = HashMap::new();
        for &(tm, cm) in &tile_classes(m, g.m) {
            for &(tn, cn) in &tile_classes(n, g.n) {
                for (vi, visit) in visits.iter().enumerate() {
                    let last = vi + 1 == visits.len();
                    let count = cm * cn;
                    let key = (tm, tn, vi);
                    let core = match core_costs.get(&key) {
                        Some(c) => *c,
                        None => {
                            let c =
                                self.core_vector(device, plan, kind, &passes, visit, tm, tn, n, resident_global, bpe)?;
                            core_costs.insert(key, c);
                            c
                        }
                    };
                    let bytes = tm * tn * bpe * if last { 2 } else { 1 };
                    let io = if device.has_main_memory() {
                        checked_div(bytes as f64, device.memory_bandwidth_bytes_per_s, "main memory")?
                    } else {
                        0.0
                    };
                    let comp = core.cycles / freq;
                    if plan.double_buffer_global {
                        total += count as f64 * io.max(comp);
                        first_fill.get_or_insert(io.min(comp));
                    } else {
                        total += count as f64 * (io + comp);
                    }
                    io_main += count as f64 * io;
                    if device.has_main_memory() {
                        bytes_main += count * bytes;
                    }
                    inner.add(core.scaled(count));
                }
            }
        }
        total += first_fill.unwrap_or(0.0);
        let overhead = device.kernel_launch_overhead_s;
        total += overhead;
        let flops = spec.flops();
        Ok(LatencyReport {
            total_s: total,
            io_s: LevelSeconds {
                main_global: io_main,
                global_local: inner.io_global / freq,
                local_lanes: inner.io_lane / freq,
            },
            compute_s: inner.compute / freq,
            launch_overhead_s: overhead,
            bytes_moved: LevelBytes {
                main_global: bytes_main,
                global_local: inner.bytes_global,
                local_lanes: inner.bytes_lane,
            },
            flops_executed: flops,
            utilization: (flops as f64 / (total * peak_vector_throughput(device))).clamp(0.0, 1.0),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn core_vector(
        &self,
        device: &DeviceDescriptor,
        plan: &MappingPlan,
        kind: VectorKind,
        passes: &[Pass],
        visit: &[usize],
        tm: u64,
        tn: u64,
        row_len: u64,
        resident_global: bool,
        bpe: u64,
    ) -> Result<Cost> {
        let s = plan.core_subtile;
        let sm = tm.div_ceil(s.m);
        let sn = tn.div_ceil(s.n);
        let cores = device.core_count as u64;
        let gbw = device.global_buffer_bytes_per_cycle;
        let sub_bytes = s.m * s.n * bpe;
        let split_rows = kind.has_reductions() && (sn > 1 || !resident_global || s.n < row_len);

        // Split rows re-read the subtile from the global buffer for every pass.
        let local_visits: Vec<Vec<usize>> = if resident_global && sn > 1 && kind.has_reductions() {
            visit.iter().map(|&p| vec![p]).collect()
        } else {
            vec![visit.to_vec()]
        };
        let lane_costs = local_visits
            .iter()
            .map(|v| self.lane_vector(&device.core, s.m, s.n, passes, v, bpe))
            .collect::<Result<Vec<_>>>()?;

        let items = sm * sn;
        let full_waves = items / cores;
        let tail = items % cores;
        let mut total = Cost::default();
        for (width, count) in [(cores, full_waves), (tail, 1)] {
            if width == 0 || count == 0 {
                continue;
            }
            let mut wave = Cost::default();
            let read_io = checked_div((width * sub_bytes) as f64, gbw, "global buffer")?;
            let mut first = None;
            for lc in &lane_costs {
                if plan.double_buffer_local {
                    wave.cycles += read_io.max(lc.cycles);
                    first.get_or_insert(read_io.min(lc.cycles));
                } else {
                    wave.cycles += read_io + lc.cycles;
                }
                wave.io_global += read_io;
                wave.io_lane += lc.io;
                wave.compute += lc.compute;
                wave.bytes_global += width * sub_bytes;
                wave.bytes_lane += width * lc.bytes;
            }
            wave.cycles += first.unwrap_or(0.0);
            let mut write_bytes = width * sub_bytes;
            if split_rows {
                // Exchange per-row partial statistics (two fp32 values) through the global buffer.
                write_bytes += 2 * width * s.m * 8;
                let combine =
                    (s.m * sn).div_ceil(device.core.vector_width as u64 * device.core.lane_count as u64) as f64;
                wave.cycles += combine;
                wave.compute += combine;
            }
            let write_io = checked_div(write_bytes as f64, gbw, "global buffer")?;
            wave.cycles += write_io;
            wave.io_global += write_io;
            wave.bytes_global += write_bytes;
            total.add(wave.scaled(count));
        }
        Ok(total)
    }

    fn lane_vector(
        &self,
        core: &CoreDescriptor,
        rows: u64,
        cols: u64,
        passes: &[Pass],
        visit: &[usize],
        bpe: u64,
    ) -> Result<LaneCost> {
        let lanes = core.lane_count as u64;
        let vw = core.vector_width as u64;
        let tree = ceil_log2(vw);
        let ops: u64 = visit.iter().map(|&p| passes[p].cycles_per_vector).sum();
        let reductions: u64 = visit.iter().map(|&p| passes[p].reductions).sum();
        let per_row: u64 = visit.iter().map(|&p| passes[p].per_row_cycles).sum();
        let compute = if rows >= lanes {
            let rows_per_lane = rows.div_ceil(lanes);
            rows_per_lane * (cols.div_ceil(vw) * ops + reductions * tree + per_row)
        } else {
            let lanes_per_row = lanes / rows;
            let per_lane = cols.div_ceil(lanes_per_row);
            per_lane.div_ceil(vw) * ops + reductions * (tree + ceil_log2(lanes_per_row)) + per_row
        } as f64;
        let bytes = rows * cols * bpe * (visit.len() as u64 + 1);
        let io = checked_div(bytes as f64, core.local_buffer_bytes_per_cycle, "local buffer")?;
        Ok(LaneCost {
            cycles: compute.max(io),
            io,
            compute,
            bytes,
        })
    }
}

/// One sweep over the data performed by a vector operator.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pass {
    cycles_per_vector: u64,
    reductions: u64,
    per_row_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VectorKind {
    Softmax,
    LayerNorm,
    Gelu,
}

impl VectorKind {
    pub(crate) fn of(spec: &OperatorSpec) -> Result<Self> {
        match spec.shape {
            OpShape::Softmax { .. } => Ok(VectorKind::Softmax),
            OpShape::LayerNorm { .. } => Ok(VectorKind::LayerNorm),
            OpShape::Gelu { .. } => Ok(VectorKind::Gelu),
            _ => Err(Error::invariant(
                MODULE,
                "simulate_vector_op needs softmax, layernorm or gelu",
            )),
        }
    }

    pub(crate) fn rows_cols(self, spec: &OperatorSpec) -> (u64, u64) {
        match spec.shape {
            OpShape::Softmax { m, n } | OpShape::LayerNorm { m, n } => (m, n),
            OpShape::Gelu { elements } => (1, elements),
            _ => unreachable!("checked by VectorKind::of"),
        }
    }

    fn has_reductions(self) -> bool {
        !matches!(self, VectorKind::Gelu)
    }

    pub(crate) fn passes(self, core: &CoreDescriptor) -> Vec<Pass> {
        let t = core.transcendental_cycles as u64;
        let d = core.divide_cycles as u64;
        match self {
            // online max/sum: compare, subtract, exp, add; then divide
            VectorKind::Softmax => vec![
                Pass {
                    cycles_per_vector: 3 + t,
                    reductions: 2,
                    per_row_cycles: 0,
                },
                Pass {
                    cycles_per_vector: d,
                    reductions: 0,
                    per_row_cycles: 0,
                },
            ],
            VectorKind::LayerNorm => vec![
                Pass {
                    cycles_per_vector: 1,
                    reductions: 1,
                    per_row_cycles: 0,
                },
                Pass {
                    cycles_per_vector: 3,
                    reductions: 1,
                    per_row_cycles: t,
                },
                Pass {
                    cycles_per_vector: 4,
                    reductions: 0,
                    per_row_cycles: 0,
                },
            ],
            VectorKind::Gelu => vec![Pass {
                cycles_per_vector: 5 + t,
                reductions: 0,
                per_row_cycles: 0,
            }],
        }
    }
}

/// Simulates with a fresh [`Simulator`].
pub fn simulate_matmul(device: &DeviceDescriptor, spec: &OperatorSpec, plan: &MappingPlan) -> Result<LatencyReport> {
    Simulator::new().simulate_matmul(device, spec, plan)
}

pub fn simulate_vector_op(device: &DeviceDescriptor, spec: &OperatorSpec, plan: &MappingPlan) -> Result<LatencyReport> {
    Simulator::new().simulate_vector_op(device, spec, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwdesc::{preset, MemoryProtocol, PresetName};
    use crate::workload::operator_roofline;

    /// One core, one lane, 1×1 array, 1 Hz, 8 bytes/s memory, 8 bytes/cycle buffers.
    pub(crate) fn unit_device() -> DeviceDescriptor {
        DeviceDescriptor {
            frequency_hz: 1.0,
            core_count: 1,
            global_buffer_bytes: 1 << 20,
            global_buffer_bytes_per_cycle: 8.0,
            memory_bandwidth_bytes_per_s: 8.0,
            memory_capacity_bytes: 1 << 30,
            memory_protocol: MemoryProtocol::Hbm2e,
            kernel_launch_overhead_s: 0.0,
            core: CoreDescriptor {
                lane_count: 1,
                vector_width: 1,
                systolic_rows: 1,
                systolic_cols: 1,
                local_buffer_bytes: 1 << 16,
                local_buffer_bytes_per_cycle: 8.0,
                register_file_bytes_per_lane: 1 << 16,
                transcendental_cycles: 4,
                divide_cycles: 4,
            },
        }
    }

    #[test]
    fn degenerate_matmul_hand_trace() {
        // main: A+B+C read+C write = 8 bytes at 8 B/s                 -> 1 s
        // global<->local: A+B 4 bytes (0.5 cyc) + C read/write 4 (0.5) -> 1 cycle
        // lane: 8 bytes at 8 B/cycle vs 1 MAC cycle                     -> 1 cycle
        let r = simulate_matmul(
            &unit_device(),
            &OperatorSpec::matmul(1, 1, 1),
            &MappingPlan::uniform(Tile::new(1, 1, 1)),
        )
        .unwrap();
        assert_eq!(r.total_s, 3.0);
        assert_eq!(
            r.bytes_moved,
            LevelBytes {
                main_global: 8,
                global_local: 8,
                local_lanes: 8
            }
        );
        assert_eq!(r.flops_executed, 2);
        assert_eq!(r.compute_s, 1.0);
    }

    #[test]
    fn double_buffering_degenerate() {
        let mut plan = MappingPlan::uniform(Tile::new(1, 1, 1));
        plan.double_buffer_global = true;
        plan.double_buffer_local = true;
        let r = simulate_matmul(&unit_device(), &OperatorSpec::matmul(1, 1, 1), &plan).unwrap();
        // local: max(0.5, 1) + min(0.5, 1) + C io 0.5 = 2 cycles; global: max(1, 2) + min(1, 2) = 3
        assert_eq!(r.total_s, 3.0);
    }

    #[test]
    fn a100_fit_example() {
        let a100 = preset(PresetName::A100).device;
        let plan = MappingPlan {
            global_tile: Tile::new(1024, 1024, 1024),
            core_subtile: Tile::new(128, 128, 128),
            lane_tile: Tile::new(64, 128, 64),
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: true,
            double_buffer_local: true,
        };
        let v = buffer_fit(&a100, &OperatorSpec::matmul(4096, 4096, 4096), &plan);
        let local = v.level("local").unwrap();
        assert_eq!(local.required_bytes, 196_608);
        assert!(local.fits());
        assert_eq!(local.capacity_bytes, 196_608);
        assert!(v.fits());
    }

    #[test]
    fn overflow_is_reported_exactly() {
        let mut dev = unit_device();
        dev.global_buffer_bytes = 100;
        let plan = MappingPlan::uniform(Tile::new(4, 4, 4));
        let v = buffer_fit(&dev, &OperatorSpec::matmul(4, 4, 4), &plan);
        assert_eq!(v.level("global").unwrap().required_bytes, 96);
        assert!(v.fits());
        dev.global_buffer_bytes = 90;
        let v = buffer_fit(&dev, &OperatorSpec::matmul(4, 4, 4), &plan);
        assert_eq!(v.level("global").unwrap().overflow_bytes(), 6);
        assert!(!v.fits());
        assert!(simulate_matmul(&dev, &OperatorSpec::matmul(4, 4, 4), &plan).is_err());
    }

    #[test]
    fn infinite_buffers_fit() {
        let mut dev = unit_device();
        dev.global_buffer_bytes = u64::MAX;
        dev.core.local_buffer_bytes = u64::MAX;
        dev.core.register_file_bytes_per_lane = u64::MAX;
        let plan = MappingPlan::uniform(Tile::new(1 << 20, 1 << 20, 1 << 20));
        assert!(buffer_fit(&dev, &OperatorSpec::matmul(1 << 20, 1 << 20, 1 << 20), &plan).fits());
    }

    #[test]
    fn zero_bandwidth_is_an_error() {
        let mut dev = unit_device();
        dev.memory_bandwidth_bytes_per_s = 0.0;
        let err = simulate_matmul(
            &dev,
            &OperatorSpec::matmul(1, 1, 1),
            &MappingPlan::uniform(Tile::new(1, 1, 1)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero main memory bandwidth"), "{err}");
    }

    #[test]
    fn merging_counts_duplicates_exactly() {
        let a100 = preset(PresetName::A100).device;
        let spec = OperatorSpec::matmul(512, 256, 256);
        let plan = MappingPlan {
            global_tile: Tile::new(512, 256, 256),
            core_subtile: Tile::new(64, 64, 64),
            lane_tile: Tile::new(32, 64, 32),
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: false,
            double_buffer_local: false,
        };
        let merged = Simulator::new().simulate_matmul(&a100, &spec, &plan).unwrap();
        let unmerged = Simulator::with_options(SimOptions {
            merge_global_reads: false,
        })
        .simulate_matmul(&a100, &spec, &plan)
        .unwrap();
        // 8×4 output subtiles, 32 cores in one wave, 4 k-steps.
        // unmerged: 32 A + 32 B reads per step; merged: 8 distinct A rows + 4 distinct B cols.
        let sub = 64 * 64 * 2;
        let dup = 4 * ((32 - 8) + (32 - 4)) * sub;
        assert_eq!(unmerged.bytes_moved.global_local - merged.bytes_moved.global_local, dup);
        assert_eq!(unmerged.bytes_moved.main_global, merged.bytes_moved.main_global);
        assert!(unmerged.total_s >= merged.total_s);
    }

    #[test]
    fn large_matmul_beats_no_roofline() {
        let a100 = preset(PresetName::A100).device;
        let spec = OperatorSpec::matmul(8192, 12288, 12288);
        let plan = MappingPlan {
            global_tile: Tile::new(1024, 1024, 1024),
            core_subtile: Tile::new(128, 128, 128),
            lane_tile: Tile::new(64, 128, 64),
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: true,
            double_buffer_local: true,
        };
        let r = simulate_matmul(&a100, &spec, &plan).unwrap();
        let bound = operator_roofline(&spec, &a100).latency_s;
        assert!(r.total_s >= bound, "{} < {}", r.total_s, bound);
        assert!(r.utilization > 0.3 && r.utilization <= 1.0, "{}", r.utilization);
        assert!(r.total_s >= r.compute_s && r.total_s >= r.io_s.main_global && r.total_s >= r.io_s.global_local);
    }

    #[test]
    fn gelu_zero_is_overhead_only() {
        let mut dev = unit_device();
        dev.kernel_launch_overhead_s = 5e-6;
        let r = simulate_vector_op(&dev, &OperatorSpec::gelu(0), &MappingPlan::uniform(Tile::new(1, 1, 1))).unwrap();
        assert_eq!(r.total_s, 5e-6);
        assert_eq!(r.bytes_moved, LevelBytes::default());
    }

    #[test]
    fn softmax_reads_and_writes_once() {
        let a100 = preset(PresetName::A100).device;
        let (m, n) = (4096, 4096);
        let plan = MappingPlan {
            global_tile: Tile::new(256, 1, n),
            core_subtile: Tile::new(2, 1, n),
            lane_tile: Tile::new(1, 1, n),
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: true,
            double_buffer_local: true,
        };
        let r = simulate_vector_op(&a100, &OperatorSpec::softmax(m, n), &plan).unwrap();
        assert_eq!(r.bytes_moved.main_global, 2 * m * n * 2);
    }

    #[test]
    fn split_rows_cost_extra_passes() {
        let a100 = preset(PresetName::A100).device;
        let spec = OperatorSpec::layer_norm(64, 8192);
        let mut plan = MappingPlan {
            global_tile: Tile::new(64, 1, 8192),
            core_subtile: Tile::new(1, 1, 8192),
            lane_tile: Tile::new(1, 1, 8192),
            scheme: ScheduleScheme::ColumnPartition,
            double_buffer_global: false,
            double_buffer_local: false,
        };
        let whole = simulate_vector_op(&a100, &spec, &plan).unwrap();
        plan.core_subtile = Tile::new(1, 1, 1024);
        plan.lane_tile = plan.core_subtile;
        let split = simulate_vector_op(&a100, &spec, &plan).unwrap();
        assert!(split.bytes_moved.global_local > 2 * whole.bytes_moved.global_local);
        plan.global_tile = Tile::new(64, 1, 4096);
        let spilled = simulate_vector_op(&a100, &spec, &plan).unwrap();
        assert_eq!(spilled.bytes_moved.main_global, 4 * 64 * 8192 * 2);
    }
}
