//! One function per subcommand, each returning a [`Document`].

use archsim_core::areacost::{
    area_cost_report, die_area, die_yield, dies_per_wafer, AreaParams, PriceTable, WaferParams,
};
use archsim_core::inference::{memory_budget, MemoryBudget, OperatorTiming};
use archsim_core::workload::operator_roofline;
use archsim_core::{
    InferenceReport, InferenceSimulator, MappingPlan, ModelConfig, OperatorSpec, ScheduleScheme, SearchBudget,
    StageReport, SystemDescriptor,
};
use serde_json::json;

use crate::config::Workload;
use crate::failure::{Failure, Stage};
use crate::output::{Document, Table};

pub fn plan_label(plan: &MappingPlan) -> String {
    let t = |t: &archsim_core::Tile| format!("{}x{}x{}", t.m, t.k, t.n);
    let scheme = match plan.scheme {
        ScheduleScheme::ColumnPartition => "column",
        ScheduleScheme::CooperativeReduction => "coop",
    };
    let db = |on: bool| if on { "db" } else { "sb" };
    format!(
        "g{} c{} l{} {} {}/{}",
        t(&plan.global_tile),
        t(&plan.core_subtile),
        t(&plan.lane_tile),
        scheme,
        db(plan.double_buffer_global),
        db(plan.double_buffer_local)
    )
}

pub fn simulate_op(
    system: &SystemDescriptor,
    spec: &OperatorSpec,
    sim: &InferenceSimulator,
    budget: &SearchBudget,
) -> Result<Document, Failure> {
    let device = &system.device;
    let (plan, report) = sim
        .mapper
        .find_optimal_mapping(device, spec, budget)
        .map_err(|e| Failure::core(Stage::Map, e))?;
    let roofline = operator_roofline(spec, device);
    let mut t = Table::new("operator", &["metric", "value"]);
    t.kv("kind", spec.kind_name());
    t.kv("flops", spec.flops());
    t.kv("min_main_bytes", roofline.min_bytes);
    t.kv("roofline_seconds", roofline.latency_s);
    t.kv("latency_seconds", report.total_s);
    t.kv("io_main_global_seconds", report.io_s.main_global);
    t.kv("io_global_local_seconds", report.io_s.global_local);
    t.kv("io_local_lanes_seconds", report.io_s.local_lanes);
    t.kv("compute_seconds", report.compute_s);
    t.kv("launch_overhead_seconds", report.launch_overhead_s);
    t.kv("bytes_main_global", report.bytes_moved.main_global);
    t.kv("bytes_global_local", report.bytes_moved.global_local);
    t.kv("bytes_local_lanes", report.bytes_moved.local_lanes);
    t.kv("utilization", report.utilization);
    t.kv("plan", plan_label(&plan));
    Ok(Document {
        stem: "simulate-op".into(),
        tables: vec![t],
        report: json!({
            "hardware": system,
            "operator": spec,
            "roofline": roofline,
            "plan": plan,
            "latency": report,
        }),
    })
}

fn operator_table(name: &str, ops: &[OperatorTiming]) -> Table {
    let mut t = Table::new(name, &["label", "kind", "seconds", "plan"]);
    for op in ops {
        let plan = op.plan.as_ref().map(plan_label).unwrap_or_else(|| "-".into());
        t.push([op.label.clone(), op.kind.clone(), op.seconds.to_string(), plan]);
    }
    t
}

fn memory_rows(t: &mut Table, m: &MemoryBudget) {
    t.kv("parameter_bytes", m.parameter_bytes);
    t.kv("kv_cache_bytes", m.kv_cache_bytes);
    t.kv("peak_activation_bytes", m.peak_activation_bytes);
    t.kv("required_bytes", m.required_bytes());
    t.kv("capacity_bytes", m.capacity_bytes);
}

/// Outcome of one workload run, shared with the sweep.
pub enum WorkloadResult {
    Stage { report: StageReport, memory: MemoryBudget },
    EndToEnd(Box<InferenceReport>),
}

pub fn run_workload(
    system: &SystemDescriptor,
    model: &ModelConfig,
    workload: &Workload,
    sim: &InferenceSimulator,
) -> Result<WorkloadResult, Failure> {
    let fail = |e| Failure::core(Stage::Simulate, e);
    match workload {
        Workload::Prefill(s) | Workload::Decode(s) => {
            s.validate(model).map_err(|e| Failure::core(Stage::LoadScenario, e))?;
            let cached = match workload {
                Workload::Prefill(_) => s.input_len,
                _ => s.context_len + 1,
            };
            let memory = memory_budget(system, model, s, cached).map_err(fail)?;
            memory.check().map_err(fail)?;
            let report = match workload {
                Workload::Prefill(_) => sim.simulate_prefill(system, model, s),
                _ => sim.simulate_decode_token(system, model, s),
            }
            .map_err(fail)?;
            Ok(WorkloadResult::Stage { report, memory })
        }
        Workload::EndToEnd(r) => Ok(WorkloadResult::EndToEnd(Box::new(
            sim.simulate_end_to_end(system, model, r).map_err(fail)?,
        ))),
    }
}

pub fn simulate_inference(
    system: &SystemDescriptor,
    model: &ModelConfig,
    workload: &Workload,
    sim: &InferenceSimulator,
) -> Result<Document, Failure> {
    let mut summary = Table::new("summary", &["metric", "value"]);
    let (tables, report) = match run_workload(system, model, workload, sim)? {
        WorkloadResult::Stage { report, memory } => {
            let stage = if matches!(workload, Workload::Prefill(_)) {
                "prefill"
            } else {
                "decode"
            };
            summary.kv("stage", stage);
            summary.kv("seconds", report.seconds);
            summary.kv("layer_seconds", report.layer_seconds);
            summary.kv("layers_per_stage", report.layers_per_stage);
            summary.kv("pipeline_stages", report.pipeline_stages);
            summary.kv("p2p_seconds", report.p2p_seconds);
            memory_rows(&mut summary, &memory);
            let ops = operator_table("operators", &report.operators);
            let scenario = match workload {
                Workload::Prefill(s) | Workload::Decode(s) => s,
                Workload::EndToEnd(_) => unreachable!(),
            };
            (
                vec![summary, ops],
                json!({ "hardware": system, "model": model, "scenario": scenario, "stage": report, "memory_budget": memory }),
            )
        }
        WorkloadResult::EndToEnd(r) => {
            summary.kv("stage", "end-to-end");
            summary.kv("prefill_seconds", r.prefill_seconds);
            summary.kv("decode_total_seconds", r.decode_total_seconds);
            summary.kv("decode_seconds_per_token", per_token(&r));
            summary.kv("end_to_end_seconds", r.end_to_end_seconds);
            summary.kv("tokens_per_second", r.tokens_per_second);
            summary.kv("interpolated", r.interpolated);
            memory_rows(&mut summary, &r.memory_budget);
            let mut tables = vec![
                summary,
                operator_table("prefill-operators", &r.prefill_breakdown.operators),
            ];
            if let Some(d) = &r.decode_breakdown {
                tables.push(operator_table("decode-operators", &d.operators));
            }
            let mut samples = Table::new("decode-samples", &["context_len", "seconds"]);
            for s in &r.decode_samples {
                samples.push([s.context_len.to_string(), s.seconds.to_string()]);
            }
            tables.push(samples);
            (tables, json!({ "hardware": system, "model": model, "inference": r }))
        }
    };
    Ok(Document {
        stem: "simulate-inference".into(),
        tables,
        report,
    })
}

pub fn per_token(r: &InferenceReport) -> f64 {
    if r.request.output_len == 0 {
        0.0
    } else {
        r.decode_total_seconds / r.request.output_len as f64
    }
}

pub fn area(system: &SystemDescriptor, params: &AreaParams) -> Result<Document, Failure> {
    params.validate().map_err(|e| Failure::core(Stage::LoadAreaParams, e))?;
    let b = die_area(system, params);
    let mut t = Table::new("area", &["component", "mm2"]);
    for (name, v) in b.entries() {
        t.kv(name, v);
    }
    t.kv("total", b.total());
    Ok(Document {
        stem: "area".into(),
        tables: vec![t],
        report: json!({ "breakdown": b, "total_mm2": b.total() }),
    })
}

pub fn cost(
    system: &SystemDescriptor,
    params: &AreaParams,
    wafer: &WaferParams,
    prices: &PriceTable,
) -> Result<Document, Failure> {
    let r = area_cost_report(system, params, wafer, prices).map_err(|e| Failure::core(Stage::Cost, e))?;
    let (dies, yld) = if r.total_mm2 > 0.0 {
        (dies_per_wafer(r.total_mm2, wafer), die_yield(r.total_mm2, wafer))
    } else {
        (0, 1.0)
    };
    let mut t = Table::new("cost", &["item", "value"]);
    t.kv("die_area_mm2", r.total_mm2);
    t.kv("dies_per_wafer", dies);
    t.kv("die_yield", yld);
    t.kv("die_cost_usd", r.die_cost_usd);
    t.kv("memory_protocol", system.device.memory_protocol.as_str());
    t.kv("memory_cost_usd", r.memory_cost_usd);
    t.kv("total_cost_usd", r.total_cost_usd);
    Ok(Document {
        stem: "cost".into(),
        tables: vec![t],
        report: json!({ "report": r, "dies_per_wafer": dies, "die_yield": yld, "wafer": wafer, "prices": prices }),
    })
}
