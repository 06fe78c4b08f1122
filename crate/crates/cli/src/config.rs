//! Loading hardware, model, scenario and parameter documents from the command line.

use std::path::Path;

use archsim_core::areacost::{load_area_params, AreaParams, PriceTable, WaferParams};
use archsim_core::inference::GenerationRequest;
use archsim_core::{
    load_model_config, load_system_descriptor, preset_by_name, InferenceScenario, ModelConfig, OperatorSpec,
    SystemDescriptor,
};
use serde::Deserialize;

use crate::failure::{Failure, Stage};

/// `--hardware` accepts a file path or a preset name.
pub fn load_hardware(source: &str) -> Result<SystemDescriptor, Failure> {
    let path = Path::new(source);
    if path.is_file() {
        return load_system_descriptor(path).map_err(|e| Failure::core(Stage::LoadHardware, e));
    }
    preset_by_name(source).map_err(|_| {
        Failure::config(
            Stage::LoadHardware,
            format!("`{source}` is neither a readable file nor a preset (a100, mi210, tpuv3-core)"),
        )
    })
}

pub fn load_model(source: &str) -> Result<ModelConfig, Failure> {
    load_model_config(source).map_err(|e| Failure::core(Stage::LoadModel, e))
}

/// Scenario keys shared by files and inline `k=v,k=v` strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioArgs {
    /// `prefill`, `decode` or `end-to-end` (the default).
    pub stage: Option<String>,
    pub batch: Option<u64>,
    pub input_len: Option<u64>,
    pub output_len: Option<u64>,
    /// Decode only; defaults to `input_len`.
    pub context_len: Option<u64>,
    pub tensor_parallel: Option<u64>,
    pub pipeline_parallel: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    scenario: ScenarioArgs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Workload {
    Prefill(InferenceScenario),
    Decode(InferenceScenario),
    EndToEnd(GenerationRequest),
}

impl ScenarioArgs {
    pub fn parse(source: Option<&str>) -> Result<Self, Failure> {
        let Some(source) = source else {
            return Ok(ScenarioArgs::default());
        };
        let path = Path::new(source);
        if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(Stage::LoadScenario, format!("{}: {e}", path.display())))?;
            let doc: ScenarioDocument =
                toml::from_str(&text).map_err(|e| Failure::config(Stage::LoadScenario, e.message().to_string()))?;
            return Ok(doc.scenario);
        }
        let mut table = toml::Table::new();
        for pair in source.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = split_assignment(pair, Stage::LoadScenario)?;
            table.insert(k.to_string(), parse_value(v));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Failure::config(Stage::LoadScenario, e.message().to_string()))
    }

    /// Sets one scenario key from a sweep value.
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<(), Failure> {
        let int = || {
            value
                .as_integer()
                .or_else(|| value.as_float().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                .filter(|&i| i >= 0)
                .map(|i| i as u64)
                .ok_or_else(|| {
                    Failure::config(
                        Stage::LoadScenario,
                        format!("scenario.{key} needs a non-negative integer"),
                    )
                })
        };
        match key {
            "stage" => {
                self.stage = Some(
                    value
                        .as_str()
                        .ok_or_else(|| Failure::config(Stage::LoadScenario, "scenario.stage needs a string"))?
                        .to_string(),
                )
            }
            "batch" => self.batch = Some(int()?),
            "input_len" => self.input_len = Some(int()?),
            "output_len" => self.output_len = Some(int()?),
            "context_len" => self.context_len = Some(int()?),
            "tensor_parallel" => self.tensor_parallel = Some(int()?),
            "pipeline_parallel" => self.pipeline_parallel = Some(int()?),
            other => {
                return Err(Failure::config(
                    Stage::LoadScenario,
                    format!("unknown scenario key `{other}`"),
                ))
            }
        }
        Ok(())
    }

    pub fn workload(&self) -> Result<Workload, Failure> {
        let batch = self.batch.unwrap_or(1);
        let input_len = self.input_len.unwrap_or(512);
        let tp = self.tensor_parallel.unwrap_or(1);
        let pp = self.pipeline_parallel.unwrap_or(1);
        Ok(match self.stage.as_deref().unwrap_or("end-to-end") {
            "prefill" => Workload::Prefill(InferenceScenario {
                pipeline_parallel: pp,
                ..InferenceScenario::prefill(batch, input_len, tp)
            }),
            "decode" => Workload::Decode(InferenceScenario {
                pipeline_parallel: pp,
                ..InferenceScenario::decode(batch, self.context_len.unwrap_or(input_len), tp)
            }),
            "end-to-end" => Workload::EndToEnd(GenerationRequest {
                pipeline_parallel: pp,
                ..GenerationRequest::new(batch, input_len, self.output_len.unwrap_or(32), tp)
            }),
            other => {
                return Err(Failure::config(
                    Stage::LoadScenario,
                    format!("scenario.stage `{other}` is not prefill, decode or end-to-end"),
                ))
            }
        })
    }
}

/// `matmul:m=8192,k=12288,n=12288`, `softmax:m=..,n=..`, `layernorm:m=..,n=..`
/// or `gelu:elements=..`. Matmuls also take `batch`; every kind takes `bytes`.
pub fn parse_op(text: &str) -> Result<OperatorSpec, Failure> {
    let err = |msg: String| Failure::config(Stage::ParseOperator, msg);
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut fields = std::collections::BTreeMap::new();
    for pair in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = split_assignment(pair, Stage::ParseOperator)?;
        let v: u64 = v
            .parse()
            .map_err(|_| err(format!("`{k}={v}` is not a non-negative integer")))?;
        fields.insert(k.to_string(), v);
    }
    let mut take = |name: &str, default: Option<u64>| {
        fields
            .remove(name)
            .or(default)
            .ok_or_else(|| err(format!("{kind} needs `{name}`")))
    };
    let bytes = take("bytes", Some(2))?;
    let mut spec = match kind {
        "matmul" => {
            let (m, k, n, batch) = (
                take("m", None)?,
                take("k", None)?,
                take("n", None)?,
                take("batch", Some(1))?,
            );
            OperatorSpec::batched_matmul(m, k, n, batch)
        }
        "softmax" => OperatorSpec::softmax(take("m", None)?, take("n", None)?),
        "layernorm" => OperatorSpec::layer_norm(take("m", None)?, take("n", None)?),
        "gelu" => OperatorSpec::gelu(take("elements", None)?),
        other => {
            return Err(err(format!(
                "unknown operator `{other}` (matmul, softmax, layernorm, gelu)"
            )))
        }
    };
    if let Some(extra) = fields.keys().next() {
        return Err(err(format!("{kind} does not take `{extra}`")));
    }
    spec.bytes_per_element = bytes;
    spec.validate().map_err(|e| Failure::core(Stage::ParseOperator, e))?;
    Ok(spec)
}

pub fn load_area(path: Option<&Path>) -> Result<AreaParams, Failure> {
    match path {
        None => Ok(AreaParams::default()),
        Some(p) => load_area_params(p).map_err(|e| Failure::core(Stage::LoadAreaParams, e)),
    }
}

pub fn load_wafer(path: Option<&Path>) -> Result<WaferParams, Failure> {
    let Some(p) = path else {
        return Ok(WaferParams::default());
    };
    let w: WaferParams = read_toml(p, Stage::LoadCostParams)?;
    w.validate().map_err(|e| Failure::core(Stage::LoadCostParams, e))?;
    Ok(w)
}

pub fn load_prices(path: Option<&Path>) -> Result<PriceTable, Failure> {
    match path {
        None => Ok(PriceTable::default()),
        Some(p) => read_toml(p, Stage::LoadCostParams),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(stage, format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(stage, format!("{}: {}", path.display(), e.message())))
}

/// Integer, then float, then boolean; anything else is a string.
pub fn parse_value(text: &str) -> toml::Value {
    let t = text.trim();
    if let Ok(i) = t.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = t.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = t.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(t.to_string())
    }
}

pub fn split_assignment(text: &str, stage: Stage) -> Result<(&str, &str), Failure> {
    text.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| Failure::config(stage, format!("expected `key=value`, got `{text}`")))
}
