//! Declarative layer graph: node types, validation, serialization and
//! shape inference. Builders live in [`builder`], execution in [`exec`].

pub mod builder;
pub mod exec;
mod shape;
pub mod spec;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Shape, TensorError};

pub use builder::{
    build_backbone, build_backbone_for_stride, build_basic_unit, build_downsample_unit,
    build_exit_flow, build_head, build_network, GraphBuilder,
};
pub use exec::{calibrate_batch_norm, forward, ExecError, Executor, ForwardOutput};
pub use shape::{infer_shapes, ShapeTable};
pub use spec::{DpcBranchSpec, HeadKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeTarget {
    Fixed {
        height: usize,
        width: usize,
    },
    /// Spatial size of another (earlier) node, e.g. the image input.
    SameAs(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input {
        channels: usize,
    },
    Conv {
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        rate: [usize; 2],
        groups: usize,
        bias: bool,
    },
    /// Channel multiplier 1: one `k_h x k_w` filter per input channel.
    #[serde(rename = "dwconv")]
    DepthwiseConv {
        kernel: [usize; 2],
        stride: [usize; 2],
        rate: [usize; 2],
        bias: bool,
    },
    #[serde(rename = "bn")]
    BatchNorm,
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    #[serde(rename = "gap")]
    GlobalAvgPool,
    Split {
        part: SplitPart,
    },
    Shuffle {
        groups: usize,
    },
    Concat,
    Resize {
        target: ResizeTarget,
        align_corners: bool,
    },
    Dropout {
        keep_prob: f32,
    },
    #[serde(rename = "argmax")]
    ArgMax,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::DepthwiseConv { .. } => "dwconv",
            LayerKind::BatchNorm => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Split { .. } => "split",
            LayerKind::Shuffle { .. } => "shuffle",
            LayerKind::Concat => "concat",
            LayerKind::Resize { .. } => "resize",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::ArgMax => "argmax",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::DepthwiseConv { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: NodeId,
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node {id} ({name}): {reason}")]
    Invalid {
        id: NodeId,
        name: String,
        reason: String,
    },
    #[error("graph: {0}")]
    Structure(String),
    #[error("node {id} ({name}): {dim} expected {expected}, got {actual}")]
    ShapeMismatch {
        id: NodeId,
        name: String,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported output stride {0} (expected 8 or 16)")]
    UnsupportedOutputStride(usize),
    #[error("{what} needs an even channel count, got {channels}")]
    OddChannels { what: String, channels: usize },
    #[error("dense prediction branch {branch} refers to input {input_ref}, which is not an earlier branch")]
    DpcReference { branch: usize, input_ref: i64 },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("graph document: {0}")]
    Document(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// A validated DAG of layer nodes stored in topological order.
///
/// Node `i` has id `i`; every input refers to a smaller id; node 0 is the
/// only input node and every node except `output` is consumed by someone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Graph {
    nodes: Vec<LayerNode>,
    output: NodeId,
}

#[derive(Deserialize)]
struct GraphDocument {
    nodes: Vec<LayerNode>,
    output: NodeId,
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GraphDocument::deserialize(d)?;
        Graph::new(doc.nodes, doc.output).map_err(serde::de::Error::custom)
    }
}

/// One named parameter blob a node expects from the weight manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub node: NodeId,
    pub name: String,
    pub shape: Vec<usize>,
}

pub const BN_PARAM_SUFFIXES: [&str; 4] = ["gamma", "beta", "moving_mean", "moving_variance"];

impl Graph {
    pub fn new(nodes: Vec<LayerNode>, output: NodeId) -> Result<Self> {
        if nodes.is_empty() {
            return Err(GraphError::Structure("graph has no nodes".into()));
        }
        let mut names = HashSet::new();
        let mut consumed = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            let invalid = |reason: String| GraphError::Invalid {
                id: node.id,
                name: node.name.clone(),
                reason,
            };
            if node.id != NodeId(i) {
                return Err(invalid(format!("id does not match position {i}")));
            }
            if !names.insert(node.name.as_str()) {
                return Err(invalid("duplicate node name".into()));
            }
            let is_input = matches!(node.kind, LayerKind::Input { .. });
            if is_input != (i == 0) {
                return Err(invalid(
                    "exactly one input node is allowed and it must come first".into(),
                ));
            }
            let arity_ok = match node.kind {
                LayerKind::Input { .. } => node.inputs.is_empty(),
                LayerKind::Concat => !node.inputs.is_empty(),
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(invalid(format!(
                    "wrong number of inputs ({}) for {}",
                    node.inputs.len(),
                    node.kind.tag()
                )));
            }
            for input in &node.inputs {
                if input.0 >= i {
                    return Err(invalid(format!("input {input} is not an earlier node")));
                }
                consumed[input.0] = true;
            }
            if let LayerKind::Resize {
                target: ResizeTarget::SameAs(r),
                ..
            } = node.kind
            {
                if r.0 >= i {
                    return Err(invalid(format!(
                        "resize reference {r} is not an earlier node"
                    )));
                }
            }
        }
        if output.0 >= nodes.len() {
            return Err(GraphError::Structure(format!(
                "output {output} does not exist"
            )));
        }
        for (i, used) in consumed.iter().enumerate() {
            if !used && NodeId(i) != output {
                return Err(GraphError::Structure(format!(
                    "node {} ({}) is never consumed; a graph has a single output",
                    NodeId(i),
                    nodes[i].name
                )));
            }
        }
        Ok(Graph { nodes, output })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id.0]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input_channels(&self) -> usize {
        match self.nodes[0].kind {
            LayerKind::Input { channels } => channels,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn find(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn count_kind(&self, tag: &str) -> usize {
        self.nodes.iter().filter(|n| n.kind.tag() == tag).count()
    }

    /// Number of data edges leaving each node.
    pub fn fan_out(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        for n in &self.nodes {
            for i in &n.inputs {
                out[i.0] += 1;
            }
        }
        out
    }

    /// The node whose value is the network's pre-argmax output.
    pub fn logits_node(&self) -> NodeId {
        let out = self.node(self.output);
        match out.kind {
            LayerKind::ArgMax => out.inputs[0],
            _ => self.output,
        }
    }

    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization is infallible")
    }

    pub fn from_document(text: &str) -> Result<Graph> {
        serde_json::from_str(text).map_err(|e| GraphError::Document(e.to_string()))
    }

    /// CRC32 of the compact serialized graph, as 8 hex digits.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("graph serialization is infallible");
        format!("{:08x}", crc32fast::hash(&bytes))
    }

    /// Every parameter blob the graph needs, in node order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        let probe = Shape::new(1, self.input_channels(), 1, 1)?;
        let shapes = infer_shapes(self, probe)?;
        let mut specs = Vec::new();
        for node in &self.nodes {
            let in_c = node.inputs.first().map(|i| shapes.get(*i).c());
            let mut push = |suffix: &str, shape: Vec<usize>| {
                specs.push(ParamSpec {
                    node: node.id,
                    name: format!("{}/{suffix}", node.name),
                    shape,
                })
            };
            match &node.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    groups,
                    bias,
                    ..
                } => {
                    let in_c = in_c.expect("conv has an input");
                    push(
                        "weights",
                        vec![*out_channels, in_c / groups, kernel[0], kernel[1]],
                    );
                    if *bias {
                        push("bias", vec![*out_channels]);
                    }
                }
                LayerKind::DepthwiseConv { kernel, bias, .. } => {
                    let c = in_c.expect("dwconv has an input");
                    push("weights", vec![c, 1, kernel[0], kernel[1]]);
                    if *bias {
                        push("bias", vec![c]);
                    }
                }
                LayerKind::BatchNorm => {
                    let c = in_c.expect("bn has an input");
                    for s in BN_PARAM_SUFFIXES {
                        push(s, vec![c]);
                    }
                }
                _ => {}
            }
        }
        Ok(specs)
    }
}
