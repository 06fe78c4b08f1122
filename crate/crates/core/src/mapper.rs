//! Candidate plan enumeration and budgeted latency search.
//!
//! Tile extents are drawn from ladders `min(D, base · 2^j)`: core subtiles
//! start at the systolic dimensions (vector width for row-wise operators) and
//! global tiles are subtiles scaled by `2^j`, `j ≤ 6`. If the fitted space
//! still exceeds [`ENUMERATION_CAP`] the global scaling range is narrowed.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::{CoreDescriptor, DeviceDescriptor};
use crate::opsim::{buffer_fit, LatencyReport, MappingPlan, ScheduleScheme, Simulator, Tile};
use crate::workload::{OpShape, OperatorSpec};

const MODULE: &str = "mapper";

/// Upper bound on the number of plans one enumeration may return.
pub const ENUMERATION_CAP: usize = 200_000;
const MAX_GLOBAL_SCALE_LOG2: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_candidates: usize,
    pub deterministic_seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_candidates: 4096,
            deterministic_seed: 0,
        }
    }
}

impl SearchBudget {
    pub fn new(max_candidates: usize, deterministic_seed: u64) -> Result<Self> {
        let b = SearchBudget {
            max_candidates,
            deterministic_seed,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn unlimited(deterministic_seed: u64) -> Self {
        SearchBudget {
            max_candidates: usize::MAX,
            deterministic_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_candidates == 0 {
            return Err(Error::invariant(MODULE, "max_candidates must be >= 1"));
        }
        Ok(())
    }
}

/// `{min(d, base · 2^j)}` for `j = 0, 1, …` until `d` is reached.
pub fn ladder(d: u64, base: u64) -> Vec<u64> {
    let mut v = Vec::new();
    let mut x = base.max(1);
    loop {
        v.push(x.min(d));
        if x >= d {
            break;
        }
        x *= 2;
    }
    v.dedup();
    v
}

fn scaled(sub: u64, d: u64, max_log2: u32) -> Vec<u64> {
    let mut v: Vec<u64> = (0..=max_log2).map(|j| (sub << j).min(d)).collect();
    v.dedup();
    v
}

fn round_up(x: u64, to: u64) -> u64 {
    x.div_ceil(to) * to
}

fn divisors(n: u64) -> Vec<u64> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// One lane tile per `pm × pn` factorization of the lane count, with the K
/// extent halved until the lane footprint fits the register file.
fn lane_tiles(core: &CoreDescriptor, sub: Tile, bpe: u64) -> Vec<Tile> {
    let lanes = core.lane_count as u64;
    let (r, c) = (core.systolic_rows as u64, core.systolic_cols as u64);
    let mut out = Vec::new();
    for pm in divisors(lanes) {
        let pn = lanes / pm;
        let lm = sub.m.min(round_up(sub.m.div_ceil(pm), r));
        let ln = sub.n.min(round_up(sub.n.div_ceil(pn), c));
        let mut lk = sub.k;
        let footprint = |lk: u64| (lm * lk + lk * ln + lm * ln) * bpe;
        while footprint(lk) > core.register_file_bytes_per_lane && lk > 1 {
            lk = lk.div_ceil(2);
        }
        if footprint(lk) <= core.register_file_bytes_per_lane {
            let t = Tile::new(lm, lk, ln);
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

const DB_COMBOS: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

fn enumerate_matmul(
    device: &DeviceDescriptor,
    spec: &OperatorSpec,
    m: u64,
    k: u64,
    n: u64,
    max_log2: u32,
) -> Vec<MappingPlan> {
    let core = &device.core;
    let bpe = spec.bytes_per_element;
    let (r, c) = (core.systolic_rows as u64, core.systolic_cols as u64);
    let mut plans = Vec::new();
    for &sm in &ladder(m, r) {
        for &sk in &ladder(k, r) {
            for &sn in &ladder(n, c) {
                let sub = Tile::new(sm, sk, sn);
                if (sm * sk + sk * sn + sm * sn) * bpe > core.local_buffer_bytes {
                    continue;
                }
                let lanes = lane_tiles(core, sub, bpe);
                for &tm in &scaled(sm, m, max_log2) {
                    for &tk in &scaled(sk, k, max_log2) {
                        for &tn in &scaled(sn, n, max_log2) {
                            let global = Tile::new(tm, tk, tn);
                            if (tm * tk + tk * tn + tm * tn) * bpe > device.global_buffer_bytes {
                                continue;
                            }
                            for &lane in &lanes {
                                for scheme in [ScheduleScheme::ColumnPartition, ScheduleScheme::CooperativeReduction] {
                                    if scheme == ScheduleScheme::CooperativeReduction && sk >= tk {
                                        continue;
                                    }
                                    for (dbg, dbl) in DB_COMBOS {
                                        let plan = MappingPlan {
                                            global_tile: global,
                                            core_subtile: sub,
                                            lane_tile: lane,
                                            scheme,
                                            double_buffer_global: dbg,
                                            double_buffer_local: dbl,
                                        };
                                        if buffer_fit(device, spec, &plan).fits() {
                                            plans.push(plan);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    plans
}

fn enumerate_rowwise(
    device: &DeviceDescriptor,
    spec: &OperatorSpec,
    m: u64,
    n: u64,
    max_log2: u32,
) -> Vec<MappingPlan> {
    let vw = device.core.vector_width as u64;
    let mut plans = Vec::new();
    for &sm in &ladder(m, 1) {
        for &sn in &ladder(n, vw) {
            let sub = Tile::new(sm, 1, sn);
            if 2 * sm * sn * spec.bytes_per_element > device.core.local_buffer_bytes {
                continue;
            }
            for &tm in &scaled(sm, m, max_log2) {
                for &tn in &scaled(sn, n, max_log2) {
                    for (dbg, dbl) in DB_COMBOS {
                        let plan = MappingPlan {
                            global_tile: Tile::new(tm, 1, tn),
                            core_subtile: sub,
                            lane_tile: sub,
                            scheme: ScheduleScheme::ColumnPartition,
                            double_buffer_global: dbg,
                            double_buffer_local: dbl,
                        };
                        if buffer_fit(device, spec, &plan).fits() {
                            plans.push(plan);
                        }
                    }
                }
            }
        }
    }
    plans
}

/// Largest fitting subtile, then largest global tile, with scheme 1 and
/// double buffering at both levels.
fn heuristic_index(plans: &[MappingPlan]) -> Option<usize> {
    let vol = |t: Tile| t.m as u128 * t.k as u128 * t.n as u128;
    plans
        .iter()
        .enumerate()
        .filter(|(_, p)| p.scheme == ScheduleScheme::ColumnPartition && p.double_buffer_global && p.double_buffer_local)
        .max_by(|(ia, a), (ib, b)| {
            (vol(a.core_subtile), vol(a.global_tile), vol(a.lane_tile))
                .cmp(&(vol(b.core_subtile), vol(b.global_tile), vol(b.lane_tile)))
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
}

fn raw_candidates(device: &DeviceDescriptor, spec: &OperatorSpec) -> Result<Vec<MappingPlan>> {
    spec.validate()?;
    let mut max_log2 = MAX_GLOBAL_SCALE_LOG2;
    loop {
        let plans = match spec.shape {
            OpShape::Matmul { m, k, n, .. } => enumerate_matmul(device, spec, m, k, n, max_log2),
            OpShape::Softmax { m, n } | OpShape::LayerNorm { m, n } => enumerate_rowwise(device, spec, m, n, max_log2),
            OpShape::Gelu { elements } => enumerate_rowwise(device, spec, 1, elements.max(1), max_log2),
            OpShape::AllReduce { .. } | OpShape::P2p { .. } => {
                return Err(Error::invariant(MODULE, "communication operators have no mapping"));
            }
        };
        if plans.len() <= ENUMERATION_CAP || max_log2 == 0 {
            return Ok(plans);
        }
        max_log2 -= 1;
    }
}

/// Deduplicated, fit-filtered plans in generation order. The heuristic plan
/// is always first.
pub fn enumerate_candidate_plans(device: &DeviceDescriptor, spec: &OperatorSpec) -> Result<Vec<MappingPlan>> {
    order_candidates(device, spec, None)
}

fn order_candidates(device: &DeviceDescriptor, spec: &OperatorSpec, seed: Option<u64>) -> Result<Vec<MappingPlan>> {
    let raw = raw_candidates(device, spec)?;
    let mut seen = HashSet::with_capacity(raw.len());
    let mut plans: Vec<MappingPlan> = raw.into_iter().filter(|p| seen.insert(*p)).collect();
    let Some(h) = heuristic_index(&plans) else {
        if plans.is_empty() {
            return Err(Error::infeasible(
                MODULE,
                format!("{} does not fit the device at any tiling", spec.kind_name()),
            ));
        }
        return Ok(plans);
    };
    let heuristic = plans.remove(h);
    if let Some(seed) = seed {
        plans.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    plans.truncate(ENUMERATION_CAP - 1);
    plans.insert(0, heuristic);
    Ok(plans)
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    plan: MappingPlan,
    report: LatencyReport,
}

/// Search front end with per-(device, spec, budget) memoization.
#[derive(Debug, Default)]
pub struct Mapper {
    pub simulator: Simulator,
    memo: Mutex<HashMap<String, (MappingPlan, LatencyReport)>>,
    searches: AtomicU64,
    plan_cache: Option<PathBuf>,
}

impl Mapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_simulator(simulator: Simulator) -> Self {
        Mapper {
            simulator,
            ..Self::default()
        }
    }

    /// Loads a JSON plan cache; a missing file starts empty. [`Mapper::save_plan_cache`]
    /// writes back to the same path.
    pub fn with_plan_cache(mut self, path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let entries: Vec<CacheEntry> = serde_json::from_str(&text)
                    .map_err(|e| Error::schema(MODULE, path.display().to_string(), e.to_string()))?;
                let memo = self.memo.get_mut().expect("memo lock");
                for e in entries {
                    memo.insert(e.key, (e.plan, e.report));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(path, e)),
        }
        self.plan_cache = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn save_plan_cache(&self) -> Result<()> {
        let Some(path) = &self.plan_cache else {
            return Ok(());
        };
        let memo = self.memo.lock().expect("memo lock");
        let mut entries: Vec<CacheEntry> = memo
            .iter()
            .map(|(k, (p, r))| CacheEntry {
                key: k.clone(),
                plan: *p,
                report: *r,
            })
            .collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let text = serde_json::to_string_pretty(&entries).expect("cache serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Number of searches that were not answered from the memo.
    pub fn search_count(&self) -> u64 {
        self.searches.load(Ordering::Relaxed)
    }

    pub fn find_optimal_mapping(
        &self,
        device: &DeviceDescriptor,
        spec: &OperatorSpec,
        budget: &SearchBudget,
    ) -> Result<(MappingPlan, LatencyReport)> {
        budget.validate()?;
        let key = format!(
            "{}|{}|{}:{}",
            device.fingerprint(),
            serde_json::to_string(spec).expect("spec serializes"),
            budget.max_candidates,
            budget.deterministic_seed
        );
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(*hit);
        }
        let result = self.search(device, spec, budget)?;
        self.searches.fetch_add(1, Ordering::Relaxed);
        self.memo.lock().expect("memo lock").insert(key, result);
        Ok(result)
    }

    fn search(
        &self,
        device: &DeviceDescriptor,
        spec: &OperatorSpec,
        budget: &SearchBudget,
    ) -> Result<(MappingPlan, LatencyReport)> {
        let plans = order_candidates(device, spec, Some(budget.deterministic_seed))?;
        let limit = plans.len().min(budget.max_candidates);
        let reports: Vec<Result<LatencyReport>> = plans[..limit]
            .par_iter()
            .map(|p| self.simulator.simulate(device, spec, p))
            .collect();
        let mut best: Option<(usize, LatencyReport)> = None;
        for (i, r) in reports.into_iter().enumerate() {
            let r = r?;
            if best.as_ref().is_none_or(|(_, b)| r.total_s < b.total_s) {
                best = Some((i, r));
            }
        }
        let (i, report) = best.expect("nonempty candidate set");
        Ok((plans[i], report))
    }
}

/// Searches with a fresh [`Mapper`].
pub fn find_optimal_mapping(
    device: &DeviceDescriptor,
    spec: &OperatorSpec,
    budget: &SearchBudget,
) -> Result<(MappingPlan, LatencyReport)> {
    Mapper::new().find_optimal_mapping(device, spec, budget)
}
