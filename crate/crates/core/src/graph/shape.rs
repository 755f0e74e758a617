use super::{Graph, GraphError, LayerKind, LayerNode, NodeId, ResizeTarget, Result};
use crate::ops::same_pad;
use crate::tensor::Shape;

/// Output shape of every node, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable {
    shapes: Vec<Shape>,
}

impl ShapeTable {
    pub fn get(&self, id: NodeId) -> Shape {
        self.shapes[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Shape)> + '_ {
        self.shapes.iter().enumerate().map(|(i, s)| (NodeId(i), *s))
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

fn mismatch(node: &LayerNode, dim: &'static str, expected: usize, actual: usize) -> GraphError {
    GraphError::ShapeMismatch {
        id: node.id,
        name: node.name.clone(),
        dim,
        expected,
        actual,
    }
}

fn invalid(node: &LayerNode, reason: String) -> GraphError {
    GraphError::Invalid {
        id: node.id,
        name: node.name.clone(),
        reason,
    }
}

fn spatial(
    node: &LayerNode,
    input: Shape,
    c: usize,
    k: [usize; 2],
    s: [usize; 2],
    r: [usize; 2],
) -> Result<Shape> {
    if k.contains(&0) || s.contains(&0) || r.contains(&0) {
        return Err(invalid(node, "kernel, stride and rate must be >= 1".into()));
    }
    let h = same_pad(input.h(), k[0], s[0], r[0]).out;
    let w = same_pad(input.w(), k[1], s[1], r[1]).out;
    Ok(Shape::new(input.n(), c, h, w)?)
}

/// Propagates `input` through the graph, failing at the first node whose
/// inputs are inconsistent with its parameters.
pub fn infer_shapes(graph: &Graph, input: Shape) -> Result<ShapeTable> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let ins: Vec<Shape> = node.inputs.iter().map(|i| shapes[i.0]).collect();
        let first = ins.first().copied();
        let shape = match &node.kind {
            LayerKind::Input { channels } => {
                if input.c() != *channels {
                    return Err(mismatch(node, "channels", *channels, input.c()));
                }
                input
            }
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                rate,
                groups,
                ..
            } => {
                let x = first.expect("validated arity");
                if *groups == 0 || x.c() % groups != 0 {
                    return Err(invalid(
                        node,
                        format!("input channels {} not divisible by groups {groups}", x.c()),
                    ));
                }
                if *out_channels == 0 || out_channels % groups != 0 {
                    return Err(invalid(
                        node,
                        format!("output channels {out_channels} not divisible by groups {groups}"),
                    ));
                }
                spatial(node, x, *out_channels, *kernel, *stride, *rate)?
            }
            LayerKind::DepthwiseConv {
                kernel,
                stride,
                rate,
                ..
            } => {
                let x = first.expect("validated arity");
                spatial(node, x, x.c(), *kernel, *stride, *rate)?
            }
            LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Dropout { .. } => {
                first.expect("validated arity")
            }
            LayerKind::MaxPool { kernel, stride } => {
                let x = first.expect("validated arity");
                spatial(node, x, x.c(), [*kernel; 2], [*stride; 2], [1, 1])?
            }
            LayerKind::GlobalAvgPool => {
                let x = first.expect("validated arity");
                Shape([x.n(), x.c(), 1, 1])
            }
            LayerKind::Split { .. } => {
                let x = first.expect("validated arity");
                if x.c() % 2 != 0 {
                    return Err(invalid(
                        node,
                        format!("cannot split odd channel count {}", x.c()),
                    ));
                }
                x.with_channels(x.c() / 2)
            }
            LayerKind::Shuffle { groups } => {
                let x = first.expect("validated arity");
                if *groups == 0 || x.c() % groups != 0 {
                    return Err(invalid(
                        node,
                        format!(
                            "channels {} not divisible by shuffle groups {groups}",
                            x.c()
                        ),
                    ));
                }
                x
            }
            LayerKind::Concat => {
                let x = first.expect("validated arity");
                let mut c = 0;
                for s in &ins {
                    if s.n() != x.n() {
                        return Err(mismatch(node, "batch", x.n(), s.n()));
                    }
                    if s.h() != x.h() {
                        return Err(mismatch(node, "height", x.h(), s.h()));
                    }
                    if s.w() != x.w() {
                        return Err(mismatch(node, "width", x.w(), s.w()));
                    }
                    c += s.c();
                }
                x.with_channels(c)
            }
            LayerKind::Resize { target, .. } => {
                let x = first.expect("validated arity");
                let (h, w) = match target {
                    ResizeTarget::Fixed { height, width } => (*height, *width),
                    ResizeTarget::SameAs(r) => (shapes[r.0].h(), shapes[r.0].w()),
                };
                Shape::new(x.n(), x.c(), h, w)?
            }
            LayerKind::ArgMax => first.expect("validated arity").with_channels(1),
        };
        shapes.push(shape);
    }
    Ok(ShapeTable { shapes })
}
