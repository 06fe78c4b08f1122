mod common;

use archsim_core::areacost::{core_area, die_area, AreaParams};
use archsim_core::hwdesc::LinkParameters;
use archsim_core::mapper::enumerate_candidate_plans;
use archsim_core::netsim::{link_transfer_latency, ring_allreduce_latency, wire_bytes};
use archsim_core::opsim::{buffer_fit, simulate_matmul};
use archsim_core::systolic::{systolic_tile_cycles, SystolicQuery};
use archsim_core::*;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn link_strategy() -> impl Strategy<Value = LinkParameters> {
    (0.0..1e-5f64, 0.0..1e-5f64, 1e6..1e12f64, 1u64..1024, 0u64..64).prop_map(|(l, o, b, p, f)| LinkParameters {
        latency_s: l,
        overhead_s: o,
        bandwidth_bytes_per_s: b,
        max_payload_bytes: p,
        flit_size_bytes: f,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn systolic_monotone(r in 1u32..32, c in 1u32..32, m in 1u64..300, k in 1u64..300, n in 1u64..300) {
        let q = SystolicQuery { rows: r, cols: c, tile_m: m, tile_k: k, tile_n: n };
        let base = systolic_tile_cycles(&q);
        let grown = SystolicQuery { tile_m: m + 1, ..q };
        prop_assert!(systolic_tile_cycles(&grown) >= base);
        let grown = SystolicQuery { tile_k: k + 1, ..q };
        prop_assert!(systolic_tile_cycles(&grown) >= base);
        let grown = SystolicQuery { tile_n: n + 1, ..q };
        prop_assert!(systolic_tile_cycles(&grown) >= base);
        prop_assert!(base >= k);
    }

    #[test]
    fn flit_overhead_is_whole_flits(n in 0u64..1 << 30, link in link_strategy()) {
        let extra = wire_bytes(n, &link) - n;
        if link.flit_size_bytes > 0 {
            prop_assert_eq!(extra % link.flit_size_bytes, 0);
        } else {
            prop_assert_eq!(extra, 0);
        }
        prop_assert!(link_transfer_latency(n, &link) >= link.latency_s + link.overhead_s);
    }

    #[test]
    fn ring_properties(payload in 0u64..1 << 32, extra in 0u64..1 << 20, p in 2u32..64, link in link_strategy()) {
        let zero = ring_allreduce_latency(&CollectiveSpec::new(0, p).unwrap(), &link);
        prop_assert_eq!(zero, (2 * (p - 1)) as f64 * (link.latency_s + link.overhead_s));
        let a = ring_allreduce_latency(&CollectiveSpec::new(payload, p).unwrap(), &link);
        let b = ring_allreduce_latency(&CollectiveSpec::new(payload + extra, p).unwrap(), &link);
        prop_assert!(b >= a);
        prop_assert_eq!(ring_allreduce_latency(&CollectiveSpec::new(payload, 1).unwrap(), &link), 0.0);
    }

    #[test]
    fn matmul_report_invariants(seed in any::<u64>(), which in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let device = [preset(PresetName::A100).device, preset(PresetName::Mi210).device][which].clone();
        let (m, k, n) = (log_uniform(&mut rng, 3000), log_uniform(&mut rng, 3000), log_uniform(&mut rng, 3000));
        let spec = OperatorSpec::matmul(m, k, n);
        let plan = random_matmul_plan(&mut rng, &device, &spec, m, k, n);
        let r = simulate_matmul(&device, &spec, &plan).unwrap();
        prop_assert!(r.total_s >= r.compute_s);
        prop_assert!(r.total_s >= r.io_s.main_global);
        prop_assert!(r.total_s >= r.io_s.global_local);
        prop_assert!(r.total_s >= r.io_s.local_lanes);
        prop_assert!((0.0..=1.0).contains(&r.utilization));
        prop_assert_eq!(r.flops_executed, 2 * m * k * n);
        prop_assert_eq!(simulate_matmul(&device, &spec, &plan).unwrap(), r);
    }

    #[test]
    fn double_buffering_doubles_footprint(m in 1u64..512, k in 1u64..512, n in 1u64..512) {
        let device = preset(PresetName::A100).device;
        let spec = OperatorSpec::matmul(m, k, n);
        let mut plan = MappingPlan::uniform(Tile::new(m, k, n));
        let single = buffer_fit(&device, &spec, &plan);
        plan.double_buffer_global = true;
        plan.double_buffer_local = true;
        let double = buffer_fit(&device, &spec, &plan);
        for level in ["global", "local"] {
            prop_assert_eq!(double.level(level).unwrap().required_bytes, 2 * single.level(level).unwrap().required_bytes);
        }
        prop_assert_eq!(double.level("lane").unwrap().required_bytes, single.level("lane").unwrap().required_bytes);
    }

    #[test]
    fn area_additive_and_monotone(lanes in 1u32..16, vw in 1u32..64, r in 1u32..64, local_kb in 1u64..4096, global_mb in 1u64..128, bw in 1e9..4e12f64) {
        let mut sys = preset(PresetName::A100);
        sys.device.core.lane_count = lanes;
        sys.device.core.vector_width = vw;
        sys.device.core.systolic_rows = r;
        sys.device.core.systolic_cols = r;
        sys.device.core.local_buffer_bytes = local_kb * 1024;
        sys.device.global_buffer_bytes = global_mb << 20;
        sys.device.memory_bandwidth_bytes_per_s = bw;
        let p = AreaParams { per_lane_overhead_mm2: 1e-4, per_core_overhead_mm2: 0.05, ..AreaParams::default() };
        let a = die_area(&sys, &p);
        prop_assert!(a.entries().iter().all(|(_, v)| *v >= 0.0));
        let sum: f64 = a.entries().iter().map(|(_, v)| v).sum();
        prop_assert_eq!(a.total(), sum);
        let mut bigger = sys.clone();
        bigger.device.core.local_buffer_bytes += 1024;
        bigger.device.global_buffer_bytes += 1 << 20;
        bigger.device.core.vector_width += 1;
        bigger.device.memory_bandwidth_bytes_per_s *= 1.5;
        prop_assert!(die_area(&bigger, &p).total() >= a.total());

        let mut doubled = sys.device.core.clone();
        doubled.lane_count *= 2;
        let (one, two) = (core_area(&sys.device.core, &p), core_area(&doubled, &p));
        prop_assert!((two.systolic - 2.0 * one.systolic).abs() <= 1e-12 * two.systolic);
        prop_assert!((two.vector - 2.0 * one.vector).abs() <= 1e-12 * two.vector);
        prop_assert!((two.regfile - 2.0 * one.regfile).abs() <= 1e-12 * two.regfile.max(1e-300));
        prop_assert!((two.lane_overhead - 2.0 * one.lane_overhead).abs() <= 1e-12 * two.lane_overhead);
        prop_assert_eq!(two.local_buffers, one.local_buffers);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn budget_prefix_monotone(m in 1u64..4096, k in 1u64..4096, n in 1u64..4096, small in 1usize..64, extra in 0usize..256, seed in any::<u64>()) {
        let device = preset(PresetName::A100).device;
        let spec = OperatorSpec::matmul(m, k, n);
        let lo = find_optimal_mapping(&device, &spec, &SearchBudget::new(small, seed).unwrap()).unwrap().1.total_s;
        let hi = find_optimal_mapping(&device, &spec, &SearchBudget::new(small + extra, seed).unwrap()).unwrap().1.total_s;
        prop_assert!(hi <= lo);
        let heuristic = enumerate_candidate_plans(&device, &spec).unwrap()[0];
        let h = Simulator::new().simulate(&device, &spec, &heuristic).unwrap().total_s;
        prop_assert!(lo <= h);
    }
}
