//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use archsim_core::hwdesc::{CoreDescriptor, DeviceDescriptor, LinkParameters, MemoryProtocol};
use archsim_core::opsim::{buffer_fit, MappingPlan, ScheduleScheme, Tile};
use archsim_core::OperatorSpec;
use rand::Rng;

/// Steps an output-stationary `r × c` array cycle by cycle over every pass of
/// `a (m×k) · b (k×n)`. Operands enter skewed from the left and top edges and
/// move one PE per cycle. Returns total cycles and the product.
pub fn cycle_stepped_systolic(r: usize, c: usize, a: &[Vec<i64>], b: &[Vec<i64>]) -> (u64, Vec<Vec<i64>>) {
    let m = a.len();
    let k = b.len();
    let n = b[0].len();
    let mut out = vec![vec![0i64; n]; m];
    let mut cycles = 0u64;
    for row0 in (0..m).step_by(r) {
        for col0 in (0..n).step_by(c) {
            // (k index, value) registers; padded PEs see zeros but still run.
            let mut a_reg: Vec<Vec<Option<(usize, i64)>>> = vec![vec![None; c]; r];
            let mut b_reg: Vec<Vec<Option<(usize, i64)>>> = vec![vec![None; c]; r];
            let mut acc = vec![vec![0i64; c]; r];
            let mut macs = vec![vec![0usize; c]; r];
            let mut t = 0usize;
            while macs.iter().flatten().any(|&x| x < k) {
                for i in 0..r {
                    for j in (1..c).rev() {
                        a_reg[i][j] = a_reg[i][j - 1];
                    }
                    a_reg[i][0] = t.checked_sub(i).filter(|&kk| kk < k).map(|kk| {
                        let v = if row0 + i < m { a[row0 + i][kk] } else { 0 };
                        (kk, v)
                    });
                }
                for j in 0..c {
                    for i in (1..r).rev() {
                        b_reg[i][j] = b_reg[i - 1][j];
                    }
                    b_reg[0][j] = t.checked_sub(j).filter(|&kk| kk < k).map(|kk| {
                        let v = if col0 + j < n { b[kk][col0 + j] } else { 0 };
                        (kk, v)
                    });
                }
                for i in 0..r {
                    for j in 0..c {
                        if let (Some((ka, va)), Some((kb, vb))) = (a_reg[i][j], b_reg[i][j]) {
                            assert_eq!(ka, kb, "skew mismatch at PE ({i},{j})");
                            acc[i][j] += va * vb;
                            macs[i][j] += 1;
                        }
                    }
                }
                t += 1;
            }
            cycles += t as u64;
            for i in 0..r {
                for j in 0..c {
                    if row0 + i < m && col0 + j < n {
                        out[row0 + i][col0 + j] = acc[i][j];
                    }
                }
            }
        }
    }
    (cycles, out)
}

pub fn naive_matmul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0; n]; m];
    for i in 0..m {
        for j in 0..n {
            out[i][j] = (0..k).map(|x| a[i][x] * b[x][j]).sum();
        }
    }
    out
}

/// `L + O + (⌈n/P⌉·F + n)/B`, written out independently of the library.
pub fn link_oracle(n: u64, l: &LinkParameters) -> f64 {
    let packets = n.div_ceil(l.max_payload_bytes);
    let wire = packets * l.flit_size_bytes + n;
    l.latency_s
        + l.overhead_s
        + if wire == 0 {
            0.0
        } else {
            wire as f64 / l.bandwidth_bytes_per_s
        }
}

/// Two cores, two lanes, 2×2 arrays, buffers a few tiles large.
pub fn toy_device() -> DeviceDescriptor {
    DeviceDescriptor {
        frequency_hz: 1e9,
        core_count: 2,
        global_buffer_bytes: 256,
        global_buffer_bytes_per_cycle: 16.0,
        memory_bandwidth_bytes_per_s: 8e9,
        memory_capacity_bytes: 1 << 30,
        memory_protocol: MemoryProtocol::Hbm2e,
        kernel_launch_overhead_s: 0.0,
        core: CoreDescriptor {
            lane_count: 2,
            vector_width: 2,
            systolic_rows: 2,
            systolic_cols: 2,
            local_buffer_bytes: 64,
            local_buffer_bytes_per_cycle: 8.0,
            register_file_bytes_per_lane: 48,
            transcendental_cycles: 4,
            divide_cycles: 4,
        },
    }
}

fn pick_le<R: Rng>(rng: &mut R, bound: u64) -> u64 {
    // powers of two and arbitrary values, both useful for edge handling
    if rng.random_bool(0.5) {
        let max_log = 63 - bound.leading_zeros() as u64;
        1 << rng.random_range(0..=max_log)
    } else {
        rng.random_range(1..=bound)
    }
}

/// A random plan for a matmul spec that passes `buffer_fit`.
pub fn random_matmul_plan<R: Rng>(
    rng: &mut R,
    device: &DeviceDescriptor,
    spec: &OperatorSpec,
    m: u64,
    k: u64,
    n: u64,
) -> MappingPlan {
    loop {
        let g = Tile::new(
            pick_le(rng, m.min(4096)),
            pick_le(rng, k.min(4096)),
            pick_le(rng, n.min(4096)),
        );
        let s = Tile::new(
            pick_le(rng, g.m.min(256)),
            pick_le(rng, g.k.min(256)),
            pick_le(rng, g.n.min(256)),
        );
        let l = Tile::new(pick_le(rng, s.m), pick_le(rng, s.k), pick_le(rng, s.n));
        let plan = MappingPlan {
            global_tile: g,
            core_subtile: s,
            lane_tile: l,
            scheme: if rng.random_bool(0.5) {
                ScheduleScheme::ColumnPartition
            } else {
                ScheduleScheme::CooperativeReduction
            },
            double_buffer_global: rng.random_bool(0.5),
            double_buffer_local: rng.random_bool(0.5),
        };
        if buffer_fit(device, spec, &plan).fits() {
            return plan;
        }
    }
}

/// Log-uniform integer in `[1, max]`.
pub fn log_uniform<R: Rng>(rng: &mut R, max: u64) -> u64 {
    let x = rng.random_range(0.0..(max as f64).ln());
    (x.exp().round() as u64).clamp(1, max)
}
