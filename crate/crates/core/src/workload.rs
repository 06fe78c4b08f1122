//! Operator graphs for one decoder-only Transformer layer under tensor
//! parallelism, plus KV-cache sizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::{peak_compute_throughput, DeviceDescriptor};

const MODULE: &str = "workload";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: u64,
    pub n_heads: u64,
    pub n_layers: u64,
    pub d_ff: u64,
    pub bytes_per_element: u64,
}

impl ModelConfig {
    /// A GPT-style model with `d_ff = 4 × d_model` at fp16.
    pub fn new(d_model: u64, n_heads: u64, n_layers: u64) -> Self {
        ModelConfig {
            d_model,
            n_heads,
            n_layers,
            d_ff: 4 * d_model,
            bytes_per_element: 2,
        }
    }

    pub fn gpt3_175b() -> Self {
        ModelConfig::new(12288, 96, 96)
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("bytes_per_element", self.bytes_per_element),
        ] {
            if v == 0 {
                return Err(Error::invariant(MODULE, format!("model.{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invariant(
                MODULE,
                "model.d_model must be divisible by model.n_heads",
            ));
        }
        Ok(())
    }

    /// Weight bytes of one layer's matmuls on one tensor-parallel device.
    pub fn layer_weight_bytes(&self, tensor_parallel: u64) -> u64 {
        let d = self.d_model;
        (4 * d * d + 2 * d * self.d_ff) / tensor_parallel * self.bytes_per_element
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    model: ModelSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    d_model: u64,
    n_heads: u64,
    n_layers: u64,
    d_ff: Option<u64>,
    bytes_per_element: Option<u64>,
}

/// Parses a `[model]` document. `d_ff` defaults to `4 × d_model` and
/// `bytes_per_element` to 2.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let doc: ModelDocument = toml::from_str(text).map_err(|e| crate::hwdesc::toml_error(MODULE, &e))?;
    let m = doc.model;
    let mut cfg = ModelConfig::new(m.d_model, m.n_heads, m.n_layers);
    if let Some(d_ff) = m.d_ff {
        cfg.d_ff = d_ff;
    }
    if let Some(b) = m.bytes_per_element {
        cfg.bytes_per_element = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A model file path, or the name `gpt3-175b`.
pub fn load_model_config(source: &str) -> Result<ModelConfig> {
    if matches!(source, "gpt3" | "gpt3-175b") {
        return Ok(ModelConfig::gpt3_175b());
    }
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    parse_model_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InferenceScenario {
    pub stage: Stage,
    pub batch: u64,
    pub input_len: u64,
    /// Decode only: tokens already held in the KV cache.
    pub context_len: u64,
    pub tensor_parallel: u64,
    pub pipeline_parallel: u64,
}

impl InferenceScenario {
    pub fn prefill(batch: u64, input_len: u64, tensor_parallel: u64) -> Self {
        InferenceScenario {
            stage: Stage::Prefill,
            batch,
            input_len,
            context_len: 0,
            tensor_parallel,
            pipeline_parallel: 1,
        }
    }

    pub fn decode(batch: u64, context_len: u64, tensor_parallel: u64) -> Self {
        InferenceScenario {
            stage: Stage::Decode,
            batch,
            input_len: 0,
            context_len,
            tensor_parallel,
            pipeline_parallel: 1,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        model.validate()?;
        if self.batch == 0 {
            return Err(Error::invariant(MODULE, "scenario.batch must be >= 1"));
        }
        match self.stage {
            Stage::Prefill if self.input_len == 0 => {
                return Err(Error::invariant(MODULE, "prefill requires scenario.input_len >= 1"))
            }
            Stage::Decode if self.context_len == 0 => {
                return Err(Error::invariant(MODULE, "decode requires scenario.context_len >= 1"))
            }
            _ => {}
        }
        if self.tensor_parallel == 0 || self.pipeline_parallel == 0 {
            return Err(Error::invariant(MODULE, "parallelism degrees must be >= 1"));
        }
        if !model.n_heads.is_multiple_of(self.tensor_parallel) || !model.d_ff.is_multiple_of(self.tensor_parallel) {
            return Err(Error::invariant(
                MODULE,
                format!(
                    "tensor_parallel={} must divide n_heads={} and d_ff={}",
                    self.tensor_parallel, model.n_heads, model.d_ff
                ),
            ));
        }
        Ok(())
    }

    /// Rows fed through the projection matmuls in this stage.
    pub fn tokens_this_stage(&self) -> u64 {
        match self.stage {
            Stage::Prefill => self.batch * self.input_len,
            Stage::Decode => self.batch,
        }
    }

    /// Keys each query attends to.
    pub fn attended_len(&self) -> u64 {
        match self.stage {
            Stage::Prefill => self.input_len,
            Stage::Decode => self.context_len + 1,
        }
    }
}

/// Shape of a dense operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OpShape {
    /// `batch` independent `M×K · K×N` products.
    Matmul {
        m: u64,
        k: u64,
        n: u64,
        batch: u64,
    },
    /// Row-wise softmax over the `n` dimension of an `m×n` matrix.
    Softmax {
        m: u64,
        n: u64,
    },
    LayerNorm {
        m: u64,
        n: u64,
    },
    Gelu {
        elements: u64,
    },
    AllReduce {
        bytes: u64,
        participants: u64,
    },
    P2p {
        bytes: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub shape: OpShape,
    pub bytes_per_element: u64,
}

impl OperatorSpec {
    pub fn matmul(m: u64, k: u64, n: u64) -> Self {
        Self::batched_matmul(m, k, n, 1)
    }

    pub fn batched_matmul(m: u64, k: u64, n: u64, batch: u64) -> Self {
        OperatorSpec {
            shape: OpShape::Matmul { m, k, n, batch },
            bytes_per_element: 2,
        }
    }

    pub fn softmax(m: u64, n: u64) -> Self {
        OperatorSpec {
            shape: OpShape::Softmax { m, n },
            bytes_per_element: 2,
        }
    }

    pub fn layer_norm(m: u64, n: u64) -> Self {
        OperatorSpec {
            shape: OpShape::LayerNorm { m, n },
            bytes_per_element: 2,
        }
    }

    pub fn gelu(elements: u64) -> Self {
        OperatorSpec {
            shape: OpShape::Gelu { elements },
            bytes_per_element: 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.shape {
            OpShape::Matmul { .. } => "matmul",
            OpShape::Softmax { .. } => "softmax",
            OpShape::LayerNorm { .. } => "layernorm",
            OpShape::Gelu { .. } => "gelu",
            OpShape::AllReduce { .. } => "allreduce",
            OpShape::P2p { .. } => "p2p",
        }
    }

    pub fn is_communication(&self) -> bool {
        matches!(self.shape, OpShape::AllReduce { .. } | OpShape::P2p { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let dims: &[u64] = match &self.shape {
            OpShape::Matmul { m, k, n, batch } => &[*m, *k, *n, *batch],
            OpShape::Softmax { m, n } | OpShape::LayerNorm { m, n } => &[*m, *n],
            // Zero-element GELU degenerates to launch overhead only.
            OpShape::Gelu { .. } => &[],
            OpShape::AllReduce { participants, .. } => &[*participants],
            OpShape::P2p { .. } => &[],
        };
        if dims.contains(&0) || self.bytes_per_element == 0 {
            return Err(Error::invariant(
                MODULE,
                format!("operator dimensions must be >= 1: {:?}", self.shape),
            ));
        }
        Ok(())
    }

    /// Arithmetic work: two flops per MAC for matmuls, elementary vector
    /// operations for the rest.
    pub fn flops(&self) -> u64 {
        match self.shape {
            OpShape::Matmul { m, k, n, batch } => 2 * m * k * n * batch,
            OpShape::Softmax { m, n } => m * n * crate::opsim::SOFTMAX_OPS_PER_ELEMENT,
            OpShape::LayerNorm { m, n } => m * n * crate::opsim::LAYERNORM_OPS_PER_ELEMENT,
            OpShape::Gelu { elements } => elements * crate::opsim::GELU_OPS_PER_ELEMENT,
            OpShape::AllReduce { .. } | OpShape::P2p { .. } => 0,
        }
    }

    /// Compulsory main-memory traffic.
    pub fn min_bytes(&self) -> u64 {
        let b = self.bytes_per_element;
        match self.shape {
            OpShape::Matmul { m, k, n, batch } => (m * k + k * n + 2 * m * n) * b * batch,
            OpShape::Softmax { m, n } | OpShape::LayerNorm { m, n } => 2 * m * n * b,
            OpShape::Gelu { elements } => 2 * elements * b,
            OpShape::AllReduce { bytes, .. } | OpShape::P2p { bytes } => bytes,
        }
    }

    /// Bytes of the operator's inputs and outputs.
    pub fn io_footprint_bytes(&self) -> u64 {
        let b = self.bytes_per_element;
        match self.shape {
            OpShape::Matmul { m, k, n, batch } => (m * k + k * n + m * n) * b * batch,
            _ => self.min_bytes(),
        }
    }
}

/// Lower-bound estimate for one operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Roofline {
    pub flops: u64,
    pub min_bytes: u64,
    pub latency_s: f64,
}

pub fn operator_roofline(spec: &OperatorSpec, device: &DeviceDescriptor) -> Roofline {
    let flops = spec.flops();
    let min_bytes = spec.min_bytes();
    let compute = flops as f64 / peak_compute_throughput(device);
    let memory = min_bytes as f64 / device.backing_bandwidth();
    Roofline {
        flops,
        min_bytes,
        latency_s: compute.max(memory),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphNode {
    pub label: &'static str,
    pub spec: OperatorSpec,
}

/// Ordered operators of one layer on one tensor-parallel device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorGraph {
    pub nodes: Vec<GraphNode>,
}

impl OperatorGraph {
    pub fn iter(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.spec.kind_name() == kind).count()
    }
}

pub fn build_layer_graph(model: &ModelConfig, scenario: &InferenceScenario) -> Result<OperatorGraph> {
    scenario.validate(model)?;
    let tp = scenario.tensor_parallel;
    let bpe = model.bytes_per_element;
    let d = model.d_model;
    let m = scenario.tokens_this_stage();
    let heads = model.n_heads / tp;
    let head_dim = model.head_dim();
    let kv_len = scenario.attended_len();
    let (q_rows, head_batch) = match scenario.stage {
        Stage::Prefill => (scenario.input_len, scenario.batch * heads),
        Stage::Decode => (1, scenario.batch * heads),
    };

    let mk = |shape| OperatorSpec {
        shape,
        bytes_per_element: bpe,
    };
    let mut nodes = vec![
        GraphNode {
            label: "qkv_projection",
            spec: mk(OpShape::Matmul {
                m,
                k: d,
                n: 3 * d / tp,
                batch: 1,
            }),
        },
        GraphNode {
            label: "attention_scores",
            spec: mk(OpShape::Matmul {
                m: q_rows,
                k: head_dim,
                n: kv_len,
                batch: head_batch,
            }),
        },
        GraphNode {
            label: "attention_softmax",
            spec: mk(OpShape::Softmax {
                m: head_batch * q_rows,
                n: kv_len,
            }),
        },
        GraphNode {
            label: "attention_context",
            spec: mk(OpShape::Matmul {
                m: q_rows,
                k: kv_len,
                n: head_dim,
                batch: head_batch,
            }),
        },
        GraphNode {
            label: "output_projection",
            spec: mk(OpShape::Matmul {
                m,
                k: d / tp,
                n: d,
                batch: 1,
            }),
        },
        GraphNode {
            label: "attention_allreduce",
            spec: mk(OpShape::AllReduce {
                bytes: m * d * bpe,
                participants: tp,
            }),
        },
        GraphNode {
            label: "attention_layernorm",
            spec: mk(OpShape::LayerNorm { m, n: d }),
        },
        GraphNode {
            label: "mlp_up",
            spec: mk(OpShape::Matmul {
                m,
                k: d,
                n: model.d_ff / tp,
                batch: 1,
            }),
        },
        GraphNode {
            label: "mlp_gelu",
            spec: mk(OpShape::Gelu {
                elements: m * model.d_ff / tp,
            }),
        },
        GraphNode {
            label: "mlp_down",
            spec: mk(OpShape::Matmul {
                m,
                k: model.d_ff / tp,
                n: d,
                batch: 1,
            }),
        },
        GraphNode {
            label: "mlp_allreduce",
            spec: mk(OpShape::AllReduce {
                bytes: m * d * bpe,
                participants: tp,
            }),
        },
        GraphNode {
            label: "mlp_layernorm",
            spec: mk(OpShape::LayerNorm { m, n: d }),
        },
    ];
    if tp == 1 {
        nodes.retain(|n| !matches!(n.spec.shape, OpShape::AllReduce { .. }));
    }
    Ok(OperatorGraph { nodes })
}

/// Key and value bytes for `tokens` cached positions.
pub fn kv_cache_bytes(model: &ModelConfig, batch: u64, tokens: u64, layers: u64) -> Result<u64> {
    if batch == 0 || tokens == 0 || layers == 0 {
        return Err(Error::invariant(
            MODULE,
            "kv_cache_bytes: batch, tokens and layers must be >= 1",
        ));
    }
    Ok(2 * model.d_model * model.bytes_per_element * batch * tokens * layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwdesc::{preset, PresetName};

    fn matmul_dims(spec: &OperatorSpec) -> (u64, u64, u64, u64) {
        match spec.shape {
            OpShape::Matmul { m, k, n, batch } => (m, k, n, batch),
            _ => panic!("not a matmul"),
        }
    }

    #[test]
    fn gpt3_prefill_qkv_shape() {
        let g = build_layer_graph(&ModelConfig::gpt3_175b(), &InferenceScenario::prefill(8, 2048, 4)).unwrap();
        assert_eq!(g.nodes[0].label, "qkv_projection");
        assert_eq!(matmul_dims(&g.nodes[0].spec), (16384, 12288, 9216, 1));
        assert_eq!(g.count("allreduce"), 2);
        let scores = matmul_dims(&g.nodes[1].spec);
        assert_eq!(scores, (2048, 128, 2048, 8 * 24));
    }

    #[test]
    fn model_documents() {
        let m = parse_model_config("[model]\nd_model = 12288\nn_heads = 96\nn_layers = 96\n").unwrap();
        assert_eq!(m, ModelConfig::gpt3_175b());
        let err = parse_model_config("[model]\nd_model = 12288\nn_heads = 96\n").unwrap_err();
        assert!(err.to_string().contains("n_layers"), "{err}");
        assert!(parse_model_config("[model]\nd_model = 100\nn_heads = 3\nn_layers = 1\n").is_err());
    }

    #[test]
    fn tp1_has_no_allreduce() {
        let g = build_layer_graph(&ModelConfig::gpt3_175b(), &InferenceScenario::prefill(1, 16, 1)).unwrap();
        assert_eq!(g.count("allreduce"), 0);
        assert_eq!(g.nodes.len(), 10);
    }

    #[test]
    fn decode_projections_have_one_row() {
        let model = ModelConfig::gpt3_175b();
        let g = build_layer_graph(&model, &InferenceScenario::decode(1, 100, 4)).unwrap();
        for node in g.iter() {
            if let OpShape::Matmul { m, k, n, batch } = node.spec.shape {
                assert_eq!(m, 1, "{}", node.label);
                if node.label == "attention_scores" {
                    assert_eq!((k, n, batch), (128, 101, 24));
                }
            }
        }
    }

    #[test]
    fn weight_bytes_are_twelve_d_squared() {
        let model = ModelConfig::new(1024, 16, 2);
        for tp in [1, 2, 4] {
            let g = build_layer_graph(&model, &InferenceScenario::decode(3, 10, tp)).unwrap();
            let weights: u64 = g
                .iter()
                .filter(|n| !n.label.starts_with("attention_s") && !n.label.starts_with("attention_c"))
                .filter_map(|n| match n.spec.shape {
                    OpShape::Matmul { k, n, batch, .. } => Some(k * n * batch * 2),
                    _ => None,
                })
                .sum();
            assert_eq!(weights, 12 * 1024 * 1024 / tp * 2);
            assert_eq!(weights, model.layer_weight_bytes(tp));
        }
    }

    #[test]
    fn attention_work_scaling() {
        let model = ModelConfig::new(512, 8, 1);
        let score_flops = |s: &InferenceScenario| build_layer_graph(&model, s).unwrap().nodes[1].spec.flops();
        let p1 = score_flops(&InferenceScenario::prefill(1, 64, 1));
        let p2 = score_flops(&InferenceScenario::prefill(1, 128, 1));
        assert_eq!(p2, 4 * p1);
        let d1 = score_flops(&InferenceScenario::decode(1, 99, 1));
        let d2 = score_flops(&InferenceScenario::decode(1, 199, 1));
        assert_eq!(d2, 2 * d1);
    }

    #[test]
    fn indivisible_split_rejected() {
        let model = ModelConfig::new(1024, 16, 1);
        let err = build_layer_graph(&model, &InferenceScenario::prefill(1, 4, 3)).unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }));
        assert!(build_layer_graph(&model, &InferenceScenario::prefill(0, 4, 1)).is_err());
        assert!(build_layer_graph(&model, &InferenceScenario::decode(1, 0, 1)).is_err());
    }

    #[test]
    fn kv_cache_sizes() {
        let model = ModelConfig::gpt3_175b();
        assert_eq!(kv_cache_bytes(&model, 1, 1, 1).unwrap(), 49_152);
        assert_eq!(kv_cache_bytes(&model, 8, 2048, 96).unwrap(), 77_309_411_328);
        assert_eq!(kv_cache_bytes(&model, 2, 1, 1).unwrap(), 2 * 49_152);
        assert!(kv_cache_bytes(&model, 1, 0, 1).is_err());
    }

    #[test]
    fn roofline_examples() {
        let a100 = preset(PresetName::A100).device;
        let r = operator_roofline(&OperatorSpec::matmul(1, 1, 1), &a100);
        assert_eq!((r.flops, r.min_bytes), (2, 8));
        let big = operator_roofline(&OperatorSpec::matmul(8192, 12288, 12288), &a100);
        assert_eq!(big.flops, 2 * 8192 * 12288 * 12288);
        let ar = OperatorSpec {
            shape: OpShape::AllReduce {
                bytes: 4096,
                participants: 4,
            },
            bytes_per_element: 2,
        };
        let r = operator_roofline(&ar, &a100);
        assert_eq!((r.flops, r.min_bytes), (0, 4096));
    }
}
