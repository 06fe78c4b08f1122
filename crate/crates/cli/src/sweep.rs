//! Cartesian parameter grids over hardware and scenario keys.

use archsim_core::areacost::{area_cost_report, AreaParams, PriceTable, WaferParams};
use archsim_core::workload::operator_roofline;
use archsim_core::{InferenceSimulator, ModelConfig, OperatorSpec, SearchBudget, SystemDescriptor};
use rayon::prelude::*;
use serde_json::json;

use crate::commands::{per_token, run_workload, WorkloadResult};
use crate::config::{parse_value, split_assignment, ScenarioArgs};
use crate::failure::{Failure, Kind, Stage};
use crate::output::{Document, Table};

pub const INFERENCE_COLUMNS: [&str; 10] = [
    "index",
    "params",
    "prefill_seconds",
    "decode_seconds_per_token",
    "end_to_end_seconds",
    "tokens_per_second",
    "area_mm2",
    "total_cost_usd",
    "status",
    "detail",
];

pub const OPERATOR_COLUMNS: [&str; 11] = [
    "index",
    "params",
    "latency_seconds",
    "roofline_seconds",
    "compute_seconds",
    "launch_overhead_seconds",
    "bytes_main_global",
    "utilization",
    "plan",
    "status",
    "detail",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub raw: Vec<String>,
    pub values: Vec<toml::Value>,
}

/// Parses repeated `--set key=v1,v2,...` arguments.
pub fn parse_axes(sets: &[String]) -> Result<Vec<Axis>, Failure> {
    let mut axes: Vec<Axis> = Vec::new();
    for s in sets {
        let (key, list) = split_assignment(s, Stage::Override)?;
        if !key.contains('.') {
            return Err(Failure::config(
                Stage::Override,
                format!("`{key}` is not a `section.field` key"),
            ));
        }
        if axes.iter().any(|a| a.key == key) {
            return Err(Failure::config(Stage::Override, format!("`{key}` is set twice")));
        }
        let raw: Vec<String> = list
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if raw.is_empty() {
            return Err(Failure::config(Stage::Override, format!("`{key}` has no values")));
        }
        let values = raw.iter().map(|v| parse_value(v)).collect();
        axes.push(Axis {
            key: key.to_string(),
            raw,
            values,
        });
    }
    Ok(axes)
}

/// Index tuples in row-major order; the last axis varies fastest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<usize>> {
    let mut points = vec![Vec::new()];
    for a in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                (0..a.values.len()).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    points
}

/// Applies `scenario.*` keys to the scenario and everything else to the hardware.
pub fn apply(
    system: &SystemDescriptor,
    scenario: &ScenarioArgs,
    assignments: &[(&str, &toml::Value)],
) -> Result<(SystemDescriptor, ScenarioArgs), Failure> {
    let mut system = system.clone();
    let mut scenario = scenario.clone();
    for (key, value) in assignments {
        match key.strip_prefix("scenario.") {
            Some(field) => scenario.set(field, value)?,
            None => {
                system = system
                    .with_override(key, (*value).clone())
                    .map_err(|e| Failure::core(Stage::Override, e))?
            }
        }
    }
    Ok((system, scenario))
}

pub struct SweepInputs<'a> {
    pub system: &'a SystemDescriptor,
    pub model: &'a ModelConfig,
    pub scenario: &'a ScenarioArgs,
    pub op: Option<&'a OperatorSpec>,
    pub area: &'a AreaParams,
    pub wafer: &'a WaferParams,
    pub prices: &'a PriceTable,
    pub budget: &'a SearchBudget,
}

fn status(e: &Failure) -> &'static str {
    match e.kind {
        Kind::Config => "config-error",
        Kind::Infeasible => "infeasible",
        Kind::Internal => "internal-error",
    }
}

/// Runs every grid point concurrently; rows come back in grid order.
/// Returns the document and whether any point hit an internal failure.
pub fn run(axes: &[Axis], inputs: &SweepInputs, sim: &InferenceSimulator) -> Result<(Document, bool), Failure> {
    let points = grid(axes);
    let columns: &[&str] = if inputs.op.is_some() {
        &OPERATOR_COLUMNS
    } else {
        &INFERENCE_COLUMNS
    };
    let rows: Vec<(Vec<String>, bool)> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let assignments: Vec<(&str, &toml::Value)> = axes
                .iter()
                .zip(point)
                .map(|(a, &i)| (a.key.as_str(), &a.values[i]))
                .collect();
            let params: Vec<String> = axes
                .iter()
                .zip(point)
                .map(|(a, &i)| format!("{}={}", a.key, a.raw[i]))
                .collect();
            let mut row = vec![index.to_string(), params.join(";")];
            let outcome = match inputs.op {
                Some(spec) => op_cells(&assignments, inputs, spec, sim),
                None => inference_cells(&assignments, inputs, sim),
            };
            let internal = match outcome {
                Ok(cells) => {
                    row.extend(cells);
                    row.push("ok".into());
                    row.push(String::new());
                    false
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), columns.len() - 4));
                    row.push(status(&e).into());
                    row.push(e.to_string());
                    e.kind == Kind::Internal
                }
            };
            (row, internal)
        })
        .collect();
    let mut table = Table::new("sweep", columns);
    let mut any_internal = false;
    let mut report_rows = Vec::with_capacity(rows.len());
    for (row, internal) in rows {
        any_internal |= internal;
        report_rows.push(
            columns
                .iter()
                .zip(&row)
                .map(|(c, v)| (c.to_string(), report_cell(c, v)))
                .collect::<serde_json::Map<_, _>>(),
        );
        table.push(row);
    }
    let axes_json: Vec<_> = axes.iter().map(|a| json!({ "key": a.key, "values": a.raw })).collect();
    Ok((
        Document {
            stem: "sweep".into(),
            tables: vec![table],
            report: json!({ "axes": axes_json, "operator": inputs.op, "rows": report_rows }),
        },
        any_internal,
    ))
}

/// Numeric columns become JSON numbers, empty cells become null.
fn report_cell(column: &str, cell: &str) -> serde_json::Value {
    if matches!(column, "params" | "plan" | "status" | "detail") {
        return json!(cell);
    }
    if cell.is_empty() {
        return serde_json::Value::Null;
    }
    match cell.parse::<u64>() {
        Ok(i) => json!(i),
        Err(_) => cell.parse::<f64>().map(|f| json!(f)).unwrap_or_else(|_| json!(cell)),
    }
}

fn inference_cells(
    assignments: &[(&str, &toml::Value)],
    inputs: &SweepInputs,
    sim: &InferenceSimulator,
) -> Result<Vec<String>, Failure> {
    let (system, scenario) = apply(inputs.system, inputs.scenario, assignments)?;
    let workload = scenario.workload()?;
    let (prefill, decode, e2e, tps) = match run_workload(&system, inputs.model, &workload, sim)? {
        WorkloadResult::Stage { report, .. } => match workload {
            crate::config::Workload::Prefill(_) => {
                (report.seconds.to_string(), String::new(), String::new(), String::new())
            }
            _ => (String::new(), report.seconds.to_string(), String::new(), String::new()),
        },
        WorkloadResult::EndToEnd(r) => (
            r.prefill_seconds.to_string(),
            per_token(&r).to_string(),
            r.end_to_end_seconds.to_string(),
            r.tokens_per_second.to_string(),
        ),
    };
    let cost = area_cost_report(&system, inputs.area, inputs.wafer, inputs.prices)
        .map_err(|e| Failure::core(Stage::Cost, e))?;
    Ok(vec![
        prefill,
        decode,
        e2e,
        tps,
        cost.total_mm2.to_string(),
        cost.total_cost_usd.to_string(),
    ])
}

fn op_cells(
    assignments: &[(&str, &toml::Value)],
    inputs: &SweepInputs,
    spec: &OperatorSpec,
    sim: &InferenceSimulator,
) -> Result<Vec<String>, Failure> {
    let (system, _) = apply(inputs.system, inputs.scenario, assignments)?;
    let (plan, r) = sim
        .mapper
        .find_optimal_mapping(&system.device, spec, inputs.budget)
        .map_err(|e| Failure::core(Stage::Map, e))?;
    Ok(vec![
        r.total_s.to_string(),
        operator_roofline(spec, &system.device).latency_s.to_string(),
        r.compute_s.to_string(),
        r.launch_overhead_s.to_string(),
        r.bytes_moved.main_global.to_string(),
        r.utilization.to_string(),
        crate::commands::plan_label(&plan),
    ])
}
