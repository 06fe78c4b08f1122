//! Prefill, decode and end-to-end latency of a model on a multi-device system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::SystemDescriptor;
use crate::mapper::{Mapper, SearchBudget};
use crate::netsim::{p2p_latency, ring_allreduce_latency, CollectiveSpec};
use crate::opsim::MappingPlan;
use crate::workload::{build_layer_graph, kv_cache_bytes, InferenceScenario, ModelConfig, OpShape, Stage};

const MODULE: &str = "inference";

/// Above this many output tokens, decode latency is sampled at
/// `interpolation_samples` context lengths and interpolated linearly.
pub const DEFAULT_INTERPOLATION_THRESHOLD: u64 = 64;
pub const DEFAULT_INTERPOLATION_SAMPLES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceOptions {
    pub budget: SearchBudget,
    pub interpolation_threshold: u64,
    pub interpolation_samples: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            budget: SearchBudget::default(),
            interpolation_threshold: DEFAULT_INTERPOLATION_THRESHOLD,
            interpolation_samples: DEFAULT_INTERPOLATION_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub batch: u64,
    pub input_len: u64,
    pub output_len: u64,
    pub tensor_parallel: u64,
    pub pipeline_parallel: u64,
}

impl GenerationRequest {
    pub fn new(batch: u64, input_len: u64, output_len: u64, tensor_parallel: u64) -> Self {
        GenerationRequest {
            batch,
            input_len,
            output_len,
            tensor_parallel,
            pipeline_parallel: 1,
        }
    }

    fn prefill(&self) -> InferenceScenario {
        InferenceScenario {
            pipeline_parallel: self.pipeline_parallel,
            ..InferenceScenario::prefill(self.batch, self.input_len, self.tensor_parallel)
        }
    }

    fn decode(&self, context_len: u64) -> InferenceScenario {
        InferenceScenario {
            pipeline_parallel: self.pipeline_parallel,
            ..InferenceScenario::decode(self.batch, context_len, self.tensor_parallel)
        }
    }
}

/// One graph node's latency within a single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorTiming {
    pub label: String,
    pub kind: String,
    pub seconds: f64,
    pub plan: Option<MappingPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub layer_seconds: f64,
    pub layers_per_stage: u64,
    pub pipeline_stages: u64,
    pub p2p_seconds: f64,
    pub seconds: f64,
    pub operators: Vec<OperatorTiming>,
}

/// Per-device memory requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub parameter_bytes: u64,
    pub kv_cache_bytes: u64,
    pub peak_activation_bytes: u64,
    pub capacity_bytes: u64,
}

impl MemoryBudget {
    pub fn required_bytes(&self) -> u64 {
        self.parameter_bytes + self.kv_cache_bytes + self.peak_activation_bytes
    }

    /// Errors with [`Error::CapacityExceeded`] when the requirement exceeds capacity.
    pub fn check(&self) -> Result<()> {
        let required = self.required_bytes();
        if required > self.capacity_bytes {
            return Err(Error::CapacityExceeded {
                required,
                capacity: self.capacity_bytes,
                deficit: required - self.capacity_bytes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSample {
    pub context_len: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub request: GenerationRequest,
    pub prefill_seconds: f64,
    pub decode_samples: Vec<DecodeSample>,
    pub decode_total_seconds: f64,
    pub interpolated: bool,
    pub end_to_end_seconds: f64,
    pub tokens_per_second: f64,
    pub prefill_breakdown: StageReport,
    /// Breakdown of the last generated token, if any.
    pub decode_breakdown: Option<StageReport>,
    pub memory_budget: MemoryBudget,
}

/// Per-device parameter, KV-cache and activation bytes for one scenario.
/// `cached_tokens` is the KV-cache length that must be resident.
pub fn memory_budget(
    system: &SystemDescriptor,
    model: &ModelConfig,
    scenario: &InferenceScenario,
    cached_tokens: u64,
) -> Result<MemoryBudget> {
    let layers = layers_per_stage(model, scenario)?;
    let tp = scenario.tensor_parallel;
    let graph = build_layer_graph(model, scenario)?;
    let peak = graph
        .iter()
        .filter(|n| !n.spec.is_communication())
        .map(|n| n.spec.io_footprint_bytes())
        .max()
        .unwrap_or(0);
    Ok(MemoryBudget {
        parameter_bytes: model.layer_weight_bytes(tp) * layers,
        kv_cache_bytes: kv_cache_bytes(model, scenario.batch, cached_tokens.max(1), layers)? / tp,
        peak_activation_bytes: peak,
        capacity_bytes: system.device.backing_capacity(),
    })
}

fn layers_per_stage(model: &ModelConfig, scenario: &InferenceScenario) -> Result<u64> {
    let pp = scenario.pipeline_parallel.max(1);
    if !model.n_layers.is_multiple_of(pp) {
        return Err(Error::invariant(
            MODULE,
            format!("pipeline_parallel={pp} must divide n_layers={}", model.n_layers),
        ));
    }
    Ok(model.n_layers / pp)
}

fn check_devices(system: &SystemDescriptor, scenario: &InferenceScenario) -> Result<()> {
    let needed = scenario.tensor_parallel * scenario.pipeline_parallel;
    if needed > system.devices as u64 {
        return Err(Error::invariant(
            MODULE,
            format!(
                "tensor_parallel × pipeline_parallel = {needed} exceeds system.devices = {}",
                system.devices
            ),
        ));
    }
    Ok(())
}

/// Piecewise-linear sum of `f(c)` for `c` in `[first, last]` from samples sorted by context.
fn interpolated_sum(samples: &[DecodeSample], first: u64, last: u64) -> f64 {
    let mut total = 0.0;
    let mut seg = 0;
    for c in first..=last {
        while seg + 2 < samples.len() && samples[seg + 1].context_len < c {
            seg += 1;
        }
        let (a, b) = (samples[seg], samples[(seg + 1).min(samples.len() - 1)]);
        total += if b.context_len == a.context_len {
            a.seconds
        } else {
            let t = (c - a.context_len) as f64 / (b.context_len - a.context_len) as f64;
            a.seconds + t * (b.seconds - a.seconds)
        };
    }
    total
}

/// Runs stage simulations with one shared mapper so repeated operators are
/// searched once.
#[derive(Debug, Default)]
pub struct InferenceSimulator {
    pub mapper: Mapper,
    pub options: InferenceOptions,
}

impl InferenceSimulator {
    pub fn new(options: InferenceOptions) -> Self {
        InferenceSimulator {
            mapper: Mapper::new(),
            options,
        }
    }

    pub fn with_mapper(mapper: Mapper, options: InferenceOptions) -> Self {
        InferenceSimulator { mapper, options }
    }

    /// Latency of one stage: layer latency times layers per pipeline stage,
    /// summed over stages with activation transfers between them.
    pub fn simulate_stage(
        &self,
        system: &SystemDescriptor,
        model: &ModelConfig,
        scenario: &InferenceScenario,
    ) -> Result<StageReport> {
        system.validate()?;
        check_devices(system, scenario)?;
        let layers = layers_per_stage(model, scenario)?;
        let graph = build_layer_graph(model, scenario)?;
        let device = &system.device;
        let mut operators = Vec::with_capacity(graph.nodes.len());
        for node in graph.iter() {
            let (seconds, plan) = match node.spec.shape {
                OpShape::AllReduce { bytes, participants } => {
                    let c = CollectiveSpec::new(bytes, participants as u32)?;
                    (ring_allreduce_latency(&c, &system.interconnect), None)
                }
                OpShape::P2p { bytes } => (p2p_latency(bytes, &system.interconnect), None),
                _ => {
                    let (plan, report) = self
                        .mapper
                        .find_optimal_mapping(device, &node.spec, &self.options.budget)
                        .map_err(|e| annotate(e, node.label))?;
                    (report.total_s, Some(plan))
                }
            };
            operators.push(OperatorTiming {
                label: node.label.to_string(),
                kind: node.spec.kind_name().to_string(),
                seconds,
                plan,
            });
        }
        let layer_seconds: f64 = operators.iter().map(|o| o.seconds).sum();
        let stages = scenario.pipeline_parallel;
        let activation = scenario.tokens_this_stage() * model.d_model * model.bytes_per_element;
        let p2p_seconds = if stages > 1 {
            (stages - 1) as f64 * p2p_latency(activation, &system.interconnect)
        } else {
            0.0
        };
        Ok(StageReport {
            layer_seconds,
            layers_per_stage: layers,
            pipeline_stages: stages,
            p2p_seconds,
            seconds: layer_seconds * (layers * stages) as f64 + p2p_seconds,
            operators,
        })
    }

    pub fn simulate_prefill(
        &self,
        system: &SystemDescriptor,
        model: &ModelConfig,
        scenario: &InferenceScenario,
    ) -> Result<StageReport> {
        if scenario.stage != Stage::Prefill {
            return Err(Error::invariant(MODULE, "simulate_prefill needs a prefill scenario"));
        }
        memory_budget(system, model, scenario, scenario.input_len)?.check()?;
        self.simulate_stage(system, model, scenario)
    }

    /// One output token with `scenario.context_len` tokens already cached.
    pub fn simulate_decode_token(
        &self,
        system: &SystemDescriptor,
        model: &ModelConfig,
        scenario: &InferenceScenario,
    ) -> Result<StageReport> {
        if scenario.stage != Stage::Decode {
            return Err(Error::invariant(
                MODULE,
                "simulate_decode_token needs a decode scenario",
            ));
        }
        memory_budget(system, model, scenario, scenario.context_len + 1)?.check()?;
        self.simulate_stage(system, model, scenario)
    }

    /// Prefill plus one decode step per output token; token `t` (1-based)
    /// attends to `input_len + t - 1` cached tokens.
    pub fn simulate_end_to_end(
        &self,
        system: &SystemDescriptor,
        model: &ModelConfig,
        request: &GenerationRequest,
    ) -> Result<InferenceReport> {
        let prefill_scenario = request.prefill();
        let worst = request.input_len + request.output_len;
        let budget = memory_budget(system, model, &prefill_scenario, worst)?;
        budget.check()?;
        let prefill = self.simulate_stage(system, model, &prefill_scenario)?;

        let (first, last) = (
            request.input_len,
            request.input_len + request.output_len.saturating_sub(1),
        );
        let interpolated = request.output_len > self.options.interpolation_threshold;
        let contexts: Vec<u64> = if request.output_len == 0 {
            Vec::new()
        } else if interpolated {
            let s = self.options.interpolation_samples.max(2) as u64;
            let mut v: Vec<u64> = (0..s).map(|i| first + ((last - first) * i).div_ceil(s - 1)).collect();
            v.dedup();
            v
        } else {
            (first..=last).collect()
        };
        let stages: Vec<StageReport> = contexts
            .par_iter()
            .map(|&c| self.simulate_stage(system, model, &request.decode(c)))
            .collect::<Result<_>>()?;
        let decode_samples: Vec<DecodeSample> = contexts
            .iter()
            .zip(&stages)
            .map(|(&c, s)| DecodeSample {
                context_len: c,
                seconds: s.seconds,
            })
            .collect();
        let decode_total_seconds = if interpolated {
            interpolated_sum(&decode_samples, first, last)
        } else {
            decode_samples.iter().map(|s| s.seconds).sum()
        };
        let end_to_end_seconds = prefill.seconds + decode_total_seconds;
        let tokens_per_second = if request.output_len == 0 {
            0.0
        } else {
            (request.batch * request.output_len) as f64 / end_to_end_seconds
        };
        Ok(InferenceReport {
            request: *request,
            prefill_seconds: prefill.seconds,
            decode_samples,
            decode_total_seconds,
            interpolated,
            end_to_end_seconds,
            tokens_per_second,
            prefill_breakdown: prefill,
            decode_breakdown: stages.into_iter().last(),
            memory_budget: budget,
        })
    }
}

fn annotate(e: Error, label: &str) -> Error {
    match e {
        Error::Infeasible { module, what } => Error::Infeasible {
            module,
            what: format!("{label}: {what}"),
        },
        other => other,
    }
}
