use archsim_core::hwdesc::{CoreDescriptor, DeviceDescriptor, MemoryProtocol};
use archsim_core::mapper::{enumerate_candidate_plans, ENUMERATION_CAP};
use archsim_core::opsim::buffer_fit;
use archsim_core::*;

fn unit_device(buffer_bytes: u64) -> DeviceDescriptor {
    DeviceDescriptor {
        frequency_hz: 1e9,
        core_count: 1,
        global_buffer_bytes: buffer_bytes,
        global_buffer_bytes_per_cycle: 8.0,
        memory_bandwidth_bytes_per_s: 1e9,
        memory_capacity_bytes: 1 << 20,
        memory_protocol: MemoryProtocol::Hbm2e,
        kernel_launch_overhead_s: 0.0,
        core: CoreDescriptor {
            lane_count: 1,
            vector_width: 1,
            systolic_rows: 1,
            systolic_cols: 1,
            local_buffer_bytes: buffer_bytes,
            local_buffer_bytes_per_cycle: 8.0,
            register_file_bytes_per_lane: buffer_bytes,
            transcendental_cycles: 4,
            divide_cycles: 4,
        },
    }
}

#[test]
fn single_element_tiles_only() {
    // room for exactly one element of each operand
    let device = unit_device(6);
    let plans = enumerate_candidate_plans(&device, &OperatorSpec::matmul(1, 1, 1)).unwrap();
    assert!(!plans.is_empty());
    for p in &plans {
        for t in [p.global_tile, p.core_subtile, p.lane_tile] {
            assert_eq!(t, Tile::new(1, 1, 1));
        }
    }
}

#[test]
fn nothing_fits_is_infeasible() {
    let err = enumerate_candidate_plans(&unit_device(4), &OperatorSpec::matmul(1, 1, 1)).unwrap_err();
    assert!(err.is_infeasible(), "{err}");
}

#[test]
fn presets_enumerate_within_cap() {
    let spec = OperatorSpec::matmul(16384, 12288, 9216);
    for name in [PresetName::A100, PresetName::Mi210, PresetName::Tpuv3Core] {
        let device = preset(name).device;
        let plans = enumerate_candidate_plans(&device, &spec).unwrap();
        assert!(plans.len() <= ENUMERATION_CAP, "{name:?}: {}", plans.len());
        assert!(plans.iter().take(2000).all(|p| buffer_fit(&device, &spec, p).fits()));
    }
}

#[test]
fn search_is_deterministic_per_seed() {
    let device = preset(PresetName::Mi210).device;
    let spec = OperatorSpec::matmul(64, 12288, 12288);
    let budget = SearchBudget::new(300, 42).unwrap();
    let a = Mapper::new().find_optimal_mapping(&device, &spec, &budget).unwrap();
    let b = Mapper::new().find_optimal_mapping(&device, &spec, &budget).unwrap();
    assert_eq!(a, b);
}

#[test]
fn returned_latency_is_minimum_of_simulated() {
    let device = preset(PresetName::A100).device;
    let spec = OperatorSpec::softmax(4096, 1024);
    let (_, best) = find_optimal_mapping(&device, &spec, &SearchBudget::unlimited(0)).unwrap();
    let sim = Simulator::new();
    for p in enumerate_candidate_plans(&device, &spec).unwrap() {
        assert!(best.total_s <= sim.simulate(&device, &spec, &p).unwrap().total_s);
    }
}
