//! Topological execution of a graph against a weight manifest.

use thiserror::Error;

use super::{infer_shapes, Graph, GraphError, LayerKind, LayerNode, ResizeTarget, SplitPart};
use crate::labels::LabelMap;
use crate::ops::{self, BatchNormParams, ConvParams};
use crate::tensor::{Shape, Tensor, TensorError};
use crate::weights::{WeightManifest, WeightsError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("layer `{layer}`: {source}")]
    Weights {
        layer: String,
        #[source]
        source: WeightsError,
    },
    #[error("layer `{layer}`: {source}")]
    Kernel {
        layer: String,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ExecError>;

enum Step {
    Input,
    Conv(ConvParams),
    /// Convolution whose only consumer is a batch norm, applied in its
    /// epilogue.
    ConvBn(ConvParams, BatchNormParams),
    BatchNorm(BatchNormParams),
    /// Hands over the single input unchanged; its producer already did the work.
    Forward,
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Split(SplitPart),
    Shuffle(usize),
    Concat,
    Resize {
        target: ResizeTarget,
        align_corners: bool,
    },
    Identity,
    ArgMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Values entering the final argmax (class scores at image resolution).
    pub logits: Tensor,
    pub labels: Vec<LabelMap>,
}

/// A graph with its parameters resolved once, ready for repeated runs.
///
/// Immutable after construction; `run` may be called concurrently.
pub struct Executor<'g> {
    graph: &'g Graph,
    steps: Vec<Step>,
    /// Remaining consumers of each node, used to free intermediates early.
    consumers: Vec<usize>,
}

impl<'g> Executor<'g> {
    /// Resolves parameters and applies each batch norm inside the
    /// convolution feeding it when that convolution has no other consumer.
    pub fn new(graph: &'g Graph, weights: &WeightManifest) -> Result<Self> {
        let mut exec = Self::unfused(graph, weights)?;
        for (i, node) in graph.nodes().iter().enumerate() {
            let Step::BatchNorm(bn) = &exec.steps[i] else {
                continue;
            };
            let src = node.inputs[0].0;
            if exec.consumers[src] != 1 {
                continue;
            }
            if let Step::Conv(p) = &exec.steps[src] {
                let fused = Step::ConvBn(p.clone(), bn.clone());
                exec.steps[src] = fused;
                exec.steps[i] = Step::Forward;
            }
        }
        Ok(exec)
    }

    /// Evaluates every node separately, in graph order.
    pub fn unfused(graph: &'g Graph, weights: &WeightManifest) -> Result<Self> {
        let probe = Shape::new(1, graph.input_channels(), 1, 1).map_err(GraphError::from)?;
        let channels = infer_shapes(graph, probe)?;
        let mut steps = Vec::with_capacity(graph.nodes().len());
        for node in graph.nodes() {
            let wrap = |source| ExecError::Weights {
                layer: node.name.clone(),
                source,
            };
            let in_c = node.inputs.first().map(|i| channels.get(*i).c());
            let step = match &node.kind {
                LayerKind::Input { .. } => Step::Input,
                LayerKind::Conv { .. } | LayerKind::DepthwiseConv { .. } => {
                    Step::Conv(weights.conv_params(node, in_c.unwrap_or(0)).map_err(wrap)?)
                }
                LayerKind::BatchNorm => {
                    let bn = weights.bn_params(node, in_c.unwrap_or(0)).map_err(wrap)?;
                    bn.validate().map_err(|source| ExecError::Kernel {
                        layer: node.name.clone(),
                        source,
                    })?;
                    Step::BatchNorm(bn)
                }
                LayerKind::Relu => Step::Relu,
                LayerKind::MaxPool { kernel, stride } => Step::MaxPool {
                    kernel: *kernel,
                    stride: *stride,
                },
                LayerKind::GlobalAvgPool => Step::GlobalAvgPool,
                LayerKind::Split { part } => Step::Split(*part),
                LayerKind::Shuffle { groups } => Step::Shuffle(*groups),
                LayerKind::Concat => Step::Concat,
                LayerKind::Resize {
                    target,
                    align_corners,
                } => Step::Resize {
                    target: *target,
                    align_corners: *align_corners,
                },
                LayerKind::Dropout { .. } => Step::Identity,
                LayerKind::ArgMax => Step::ArgMax,
            };
            steps.push(step);
        }
        let consumers = graph.fan_out();
        Ok(Executor {
            graph,
            steps,
            consumers,
        })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    /// Runs every node up to and including the logits node.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        self.eval(image, &mut |_, _, _| None)
    }

    /// Like [`Executor::logits`], but `on_bn` sees each batch norm's input
    /// and may substitute the parameters applied to it.
    fn eval(
        &self,
        image: &Tensor,
        on_bn: &mut dyn FnMut(&LayerNode, &Tensor, &BatchNormParams) -> Option<BatchNormParams>,
    ) -> Result<Tensor> {
        let target = self.graph.logits_node();
        let n = target.0 + 1;
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        let mut shapes: Vec<Option<Shape>> = vec![None; n];
        let mut remaining = self.consumers.clone();

        for (i, node) in self.graph.nodes()[..n].iter().enumerate() {
            let kernel_err = |source| ExecError::Kernel {
                layer: node.name.clone(),
                source,
            };
            let input = |k: usize| -> &Tensor {
                values[node.inputs[k].0]
                    .as_ref()
                    .expect("inputs are computed before use and freed only after")
            };
            let out = match &self.steps[i] {
                Step::Input => {
                    let expected = self.graph.input_channels();
                    if image.shape().c() != expected {
                        return Err(kernel_err(TensorError::DimMismatch {
                            dim: "image channels",
                            expected,
                            actual: image.shape().c(),
                        }));
                    }
                    image.clone()
                }
                Step::Conv(p) => ops::conv2d(input(0), p).map_err(kernel_err)?,
                Step::ConvBn(p, bn) => ops::conv2d_bn(input(0), p, bn).map_err(kernel_err)?,
                Step::Forward => values[node.inputs[0].0]
                    .take()
                    .expect("sole consumer takes its input"),
                Step::BatchNorm(bn) => match on_bn(node, input(0), bn) {
                    Some(sub) => ops::batch_norm(input(0), &sub).map_err(kernel_err)?,
                    None => ops::batch_norm(input(0), bn).map_err(kernel_err)?,
                },
                Step::Relu => ops::relu(input(0)),
                Step::MaxPool { kernel, stride } => {
                    ops::maxpool(input(0), *kernel, *stride).map_err(kernel_err)?
                }
                Step::GlobalAvgPool => ops::global_avg_pool(input(0)),
                Step::Split(part) => {
                    let x = input(0);
                    let half = x.shape().c() / 2;
                    let from = match part {
                        SplitPart::First => 0,
                        SplitPart::Second => half,
                    };
                    ops::slice_channels(x, from, half).map_err(kernel_err)?
                }
                Step::Shuffle(g) => ops::channel_shuffle(input(0), *g).map_err(kernel_err)?,
                Step::Concat => {
                    let parts: Vec<&Tensor> = (0..node.inputs.len()).map(input).collect();
                    ops::concat_channels(&parts).map_err(kernel_err)?
                }
                Step::Resize {
                    target,
                    align_corners,
                } => {
                    let (h, w) = match target {
                        ResizeTarget::Fixed { height, width } => (*height, *width),
                        ResizeTarget::SameAs(r) => {
                            let s = shapes[r.0].expect("reference precedes resize");
                            (s.h(), s.w())
                        }
                    };
                    ops::bilinear_resize(input(0), h, w, *align_corners).map_err(kernel_err)?
                }
                Step::Identity => input(0).clone(),
                Step::ArgMax => unreachable!("argmax is never before the logits node"),
            };
            shapes[i] = Some(out.shape());
            values[i] = Some(out);
            for inp in &node.inputs {
                remaining[inp.0] -= 1;
                if remaining[inp.0] == 0 {
                    values[inp.0] = None;
                }
            }
        }
        Ok(values[target.0].take().expect("target computed"))
    }

    pub fn run(&self, image: &Tensor) -> Result<ForwardOutput> {
        let logits = self.logits(image)?;
        let labels = ops::argmax_channels(&logits).map_err(|source| ExecError::Kernel {
            layer: self.graph.node(self.graph.output()).name.clone(),
            source,
        })?;
        Ok(ForwardOutput { logits, labels })
    }
}

/// Per-channel mean and population variance over batch and space.
fn channel_moments(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = x.shape();
    let count = (s.n() * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c()];
    let mut var = vec![0.0f64; s.c()];
    for b in 0..s.n() {
        for c in 0..s.c() {
            mean[c] += x.plane(b, c).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for b in 0..s.n() {
        for c in 0..s.c() {
            var[c] += x
                .plane(b, c)
                .iter()
                .map(|&v| (v as f64 - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        var.iter().map(|&v| (v / count) as f32).collect(),
    )
}

/// Replaces every batch norm's moving statistics with the statistics of
/// its input on `image`, as training on that image would. Layers are
/// calibrated in order, each seeing inputs already normalized upstream.
/// Keeps activations of randomly initialized networks at unit scale.
pub fn calibrate_batch_norm(
    graph: &Graph,
    weights: &mut WeightManifest,
    image: &Tensor,
) -> Result<()> {
    let exec = Executor::unfused(graph, weights)?;
    let mut stats: Vec<(String, Vec<f32>, Vec<f32>)> = Vec::new();
    exec.eval(image, &mut |node, x, bn| {
        let (mean, var) = channel_moments(x);
        let sub = BatchNormParams {
            moving_mean: mean.clone(),
            moving_variance: var.clone(),
            ..bn.clone()
        };
        stats.push((node.name.clone(), mean, var));
        Some(sub)
    })?;
    for (name, mean, var) in stats {
        let c = mean.len();
        for (suffix, values) in [("moving_mean", mean), ("moving_variance", var)] {
            let key = format!("{name}/{suffix}");
            weights
                .replace(&key, vec![c], &values)
                .map_err(|source| ExecError::Weights {
                    layer: name.clone(),
                    source,
                })?;
        }
    }
    Ok(())
}

/// Executes `graph` on a preprocessed image, returning logits and labels.
pub fn forward(graph: &Graph, weights: &WeightManifest, image: &Tensor) -> Result<ForwardOutput> {
    Executor::new(graph, weights)?.run(image)
}
