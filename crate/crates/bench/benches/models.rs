use std::hint::black_box;

use archsim_core::systolic::systolic_tile_cycles;
use archsim_core::{
    preset_by_name, CycleMemoTable, InferenceOptions, InferenceScenario, InferenceSimulator, Mapper, MappingPlan,
    ModelConfig, OperatorSpec, SearchBudget, Simulator, SystolicQuery, Tile,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn systolic(c: &mut Criterion) {
    let q = SystolicQuery {
        rows: 16,
        cols: 16,
        tile_m: 128,
        tile_k: 128,
        tile_n: 128,
    };
    c.bench_function("systolic/closed_form", |b| {
        b.iter(|| systolic_tile_cycles(black_box(&q)))
    });
    let memo = CycleMemoTable::new();
    c.bench_function("systolic/memo_hit", |b| {
        b.iter(|| memo.lookup_or_compute(black_box(&q)))
    });
}

fn operator(c: &mut Criterion) {
    let device = preset_by_name("a100").unwrap().device;
    let spec = OperatorSpec::matmul(8192, 12288, 12288);
    let plan = MappingPlan {
        global_tile: Tile::new(256, 2048, 512),
        core_subtile: Tile::new(32, 512, 64),
        lane_tile: Tile::new(16, 512, 32),
        ..MappingPlan::uniform(Tile::new(256, 2048, 512))
    };
    let sim = Simulator::new();
    c.bench_function("opsim/matmul_8192x12288x12288", |b| {
        b.iter(|| sim.simulate(&device, black_box(&spec), &plan).unwrap())
    });
}

fn mapper(c: &mut Criterion) {
    let device = preset_by_name("a100").unwrap().device;
    let spec = OperatorSpec::matmul(2048, 12288, 4608);
    let budget = SearchBudget::default();
    let mut group = c.benchmark_group("mapper");
    group.sample_size(10);
    group.bench_function("search_default_budget", |b| {
        b.iter(|| {
            Mapper::new()
                .find_optimal_mapping(&device, black_box(&spec), &budget)
                .unwrap()
        })
    });
    group.finish();
}

fn decode(c: &mut Criterion) {
    let system = preset_by_name("a100").unwrap().with_devices(8);
    let model = ModelConfig::gpt3_175b();
    let scenario = InferenceScenario::decode(8, 1024, 8);
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    group.bench_function("decode_token_gpt3_tp8", |b| {
        b.iter(|| {
            InferenceSimulator::new(InferenceOptions::default())
                .simulate_decode_token(&system, &model, black_box(&scenario))
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, systolic, operator, mapper, decode);
criterion_main!(benches);
