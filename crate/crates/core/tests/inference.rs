use archsim_core::inference::memory_budget;
use archsim_core::*;

fn one_layer() -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        ..ModelConfig::gpt3_175b()
    }
}

fn sim() -> InferenceSimulator {
    InferenceSimulator::new(InferenceOptions {
        budget: SearchBudget::new(512, 0).unwrap(),
        ..InferenceOptions::default()
    })
}

#[test]
fn prefill_grows_with_batch() {
    let sys = preset(PresetName::A100).with_devices(4);
    let s = sim();
    let mut last = 0.0;
    for batch in [1, 2, 4, 8] {
        let t = s
            .simulate_prefill(&sys, &one_layer(), &InferenceScenario::prefill(batch, 512, 4))
            .unwrap()
            .seconds;
        assert!(t >= last, "batch {batch}: {t} < {last}");
        last = t;
    }
}

#[test]
fn decode_grows_with_context_and_memory_bound() {
    let sys = preset(PresetName::A100).with_devices(4);
    let s = sim();
    let short = s
        .simulate_decode_token(&sys, &one_layer(), &InferenceScenario::decode(8, 64, 4))
        .unwrap()
        .seconds;
    let long = s
        .simulate_decode_token(&sys, &one_layer(), &InferenceScenario::decode(8, 2048, 4))
        .unwrap()
        .seconds;
    assert!(long >= short);
    let mut half = sys.clone();
    half.device.memory_bandwidth_bytes_per_s /= 2.0;
    let slow = s
        .simulate_decode_token(&half, &one_layer(), &InferenceScenario::decode(8, 2048, 4))
        .unwrap()
        .seconds;
    assert!(slow > long);
}

#[test]
fn interpolation_within_two_percent() {
    let sys = preset(PresetName::A100).with_devices(4);
    let request = GenerationRequest::new(8, 512, 128, 4);
    let exact = InferenceSimulator::new(InferenceOptions {
        interpolation_threshold: u64::MAX,
        ..InferenceOptions::default()
    })
    .simulate_end_to_end(&sys, &one_layer(), &request)
    .unwrap();
    let approx = InferenceSimulator::new(InferenceOptions {
        interpolation_threshold: 0,
        ..InferenceOptions::default()
    })
    .simulate_end_to_end(&sys, &one_layer(), &request)
    .unwrap();
    assert!(!exact.interpolated && approx.interpolated);
    assert_eq!(exact.decode_samples.len(), 128);
    let err = (approx.decode_total_seconds / exact.decode_total_seconds - 1.0).abs();
    assert!(err < 0.02, "interpolation error {err}");
}

#[test]
fn throughput_rises_with_batch_until_capacity() {
    let sys = preset(PresetName::A100).with_devices(4);
    let model = ModelConfig {
        n_layers: 8,
        ..ModelConfig::gpt3_175b()
    };
    let s = sim();
    let mut last = 0.0;
    let mut hit_capacity = false;
    for batch in [1, 4, 16, 64, 256, 1024] {
        match s.simulate_end_to_end(&sys, &model, &GenerationRequest::new(batch, 1024, 4, 4)) {
            Ok(r) => {
                assert!(r.tokens_per_second > last, "batch {batch}");
                last = r.tokens_per_second;
            }
            Err(Error::CapacityExceeded { .. }) => {
                hit_capacity = true;
                break;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(hit_capacity);
}

#[test]
fn capacity_error_triggers_exactly_at_budget() {
    let mut sys = preset(PresetName::A100);
    let model = ModelConfig::new(1024, 16, 4);
    let scenario = InferenceScenario::prefill(4, 256, 1);
    let budget = memory_budget(&sys, &model, &scenario, 256).unwrap();
    assert_eq!(budget.parameter_bytes, 12 * 1024 * 1024 * 4 * 2);
    sys.device.memory_capacity_bytes = budget.required_bytes();
    assert!(sim().simulate_prefill(&sys, &model, &scenario).is_ok());
    sys.device.memory_capacity_bytes -= 1;
    match sim().simulate_prefill(&sys, &model, &scenario) {
        Err(Error::CapacityExceeded { deficit, .. }) => assert_eq!(deficit, 1),
        other => panic!("expected capacity error, got {other:?}"),
    }
}

#[test]
fn pipeline_stages_add_p2p() {
    let sys = preset(PresetName::A100).with_devices(2);
    let model = ModelConfig::new(1024, 16, 4);
    let s = sim();
    let flat = s
        .simulate_stage(&sys, &model, &InferenceScenario::prefill(2, 128, 1))
        .unwrap();
    let piped = s
        .simulate_stage(
            &sys,
            &model,
            &InferenceScenario {
                pipeline_parallel: 2,
                ..InferenceScenario::prefill(2, 128, 1)
            },
        )
        .unwrap();
    assert_eq!(piped.layers_per_stage, 2);
    assert!(piped.p2p_seconds > 0.0);
    assert_eq!(piped.seconds, flat.seconds + piped.p2p_seconds);
}

#[test]
fn tpu_runs_from_global_buffer() {
    let sys = preset(PresetName::Tpuv3Core).with_devices(8);
    let model = ModelConfig::new(2048, 16, 1);
    let r = sim()
        .simulate_end_to_end(&sys, &model, &GenerationRequest::new(2, 128, 2, 8))
        .unwrap();
    assert!(r.end_to_end_seconds > 0.0);
    assert_eq!(r.memory_budget.capacity_bytes, sys.device.global_buffer_bytes);
}
