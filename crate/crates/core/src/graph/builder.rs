//! Network assembly: ShuffleNet V2 units and stages rewritten for a chosen
//! output stride, the two encoder heads, and the exit flow.
//!
//! Parameterized nodes are named `<scope>/<op>`, e.g.
//! `stage3/unit2/right/dw`, and their batch norms `<scope>/<op>/batch_norm`.
//! Weight entries append the parameter name: `.../dw/weights`,
//! `.../dw/batch_norm/gamma`.

use super::spec::{
    scale_even, NetworkSpec, ENTRY_CHANNELS, HEAD_DEPTH, NOMINAL_NETWORK_STRIDE, STAGE_REPEATS,
    STAGE_WIDTHS,
};
use super::{
    Graph, GraphError, HeadKind, LayerKind, LayerNode, NodeId, ResizeTarget, Result, SplitPart,
};

pub struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    pub fn new(input_channels: usize) -> Self {
        GraphBuilder {
            nodes: vec![LayerNode {
                id: NodeId(0),
                name: "image".into(),
                kind: LayerKind::Input {
                    channels: input_channels,
                },
                inputs: vec![],
            }],
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn add(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[NodeId]) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(LayerNode {
            id,
            name: name.into(),
            kind,
            inputs: inputs.to_vec(),
        });
        id
    }

    /// Bias-free convolution followed by batch norm and optionally ReLU.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rate: (usize, usize),
        relu: bool,
    ) -> NodeId {
        let conv = self.add(
            name,
            LayerKind::Conv {
                out_channels,
                kernel: [kernel, kernel],
                stride: [stride, stride],
                rate: [rate.0, rate.1],
                groups: 1,
                bias: false,
            },
            &[x],
        );
        self.bn_relu(name, conv, relu)
    }

    /// 3x3 depthwise convolution followed by batch norm and optionally ReLU.
    pub fn dw_bn(
        &mut self,
        name: &str,
        x: NodeId,
        stride: usize,
        rate: (usize, usize),
        relu: bool,
    ) -> NodeId {
        let conv = self.add(
            name,
            LayerKind::DepthwiseConv {
                kernel: [3, 3],
                stride: [stride, stride],
                rate: [rate.0, rate.1],
                bias: false,
            },
            &[x],
        );
        self.bn_relu(name, conv, relu)
    }

    fn bn_relu(&mut self, name: &str, x: NodeId, relu: bool) -> NodeId {
        let bn = self.add(format!("{name}/batch_norm"), LayerKind::BatchNorm, &[x]);
        if relu {
            self.add(format!("{name}/relu"), LayerKind::Relu, &[bn])
        } else {
            bn
        }
    }

    pub fn finish(self, output: NodeId) -> Result<Graph> {
        Graph::new(self.nodes, output)
    }
}

fn require_even(what: String, channels: usize) -> Result<()> {
    if channels % 2 != 0 || channels == 0 {
        return Err(GraphError::OddChannels { what, channels });
    }
    Ok(())
}

/// Split, transform the second half, concat, shuffle. Keeps channels and
/// spatial size.
pub fn build_basic_unit(
    b: &mut GraphBuilder,
    scope: &str,
    x: NodeId,
    in_channels: usize,
    rate: usize,
) -> Result<NodeId> {
    require_even(format!("basic unit {scope}"), in_channels)?;
    let half = in_channels / 2;
    let left = b.add(
        format!("{scope}/split/left"),
        LayerKind::Split {
            part: SplitPart::First,
        },
        &[x],
    );
    let right = b.add(
        format!("{scope}/split/right"),
        LayerKind::Split {
            part: SplitPart::Second,
        },
        &[x],
    );
    let r = b.conv_bn(
        &format!("{scope}/right/pw1"),
        right,
        half,
        1,
        1,
        (1, 1),
        true,
    );
    let r = b.dw_bn(&format!("{scope}/right/dw"), r, 1, (rate, rate), false);
    let r = b.conv_bn(&format!("{scope}/right/pw2"), r, half, 1, 1, (1, 1), true);
    let cat = b.add(format!("{scope}/concat"), LayerKind::Concat, &[left, r]);
    Ok(b.add(
        format!("{scope}/shuffle"),
        LayerKind::Shuffle { groups: 2 },
        &[cat],
    ))
}

/// Both branches read the full input; each produces half of `out_channels`.
/// Spatial size halves iff `stride == 2`.
pub fn build_downsample_unit(
    b: &mut GraphBuilder,
    scope: &str,
    x: NodeId,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    rate: usize,
) -> Result<NodeId> {
    require_even(format!("downsampling unit {scope} output"), out_channels)?;
    if stride != 1 && stride != 2 {
        return Err(GraphError::Spec(format!(
            "downsampling unit stride {stride} not in {{1, 2}}"
        )));
    }
    if in_channels == 0 {
        return Err(GraphError::Spec(format!(
            "downsampling unit {scope} has no input channels"
        )));
    }
    let half = out_channels / 2;
    let l = b.dw_bn(&format!("{scope}/left/dw"), x, stride, (rate, rate), false);
    let l = b.conv_bn(&format!("{scope}/left/pw"), l, half, 1, 1, (1, 1), true);
    let r = b.conv_bn(&format!("{scope}/right/pw1"), x, half, 1, 1, (1, 1), true);
    let r = b.dw_bn(&format!("{scope}/right/dw"), r, stride, (rate, rate), false);
    let r = b.conv_bn(&format!("{scope}/right/pw2"), r, half, 1, 1, (1, 1), true);
    let cat = b.add(format!("{scope}/concat"), LayerKind::Concat, &[l, r]);
    Ok(b.add(
        format!("{scope}/shuffle"),
        LayerKind::Shuffle { groups: 2 },
        &[cat],
    ))
}

/// Stride and atrous rate of one stage after the output-stride rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSchedule {
    pub down_stride: usize,
    pub down_rate: usize,
    pub unit_rate: usize,
}

/// Once the accumulated stride reaches `output_stride`, every later
/// stride-2 unit runs at stride 1 and the atrous rate of the following
/// depthwise convolutions doubles instead.
pub fn stage_schedule(output_stride: usize) -> Result<[StageSchedule; 3]> {
    if ![8, 16, NOMINAL_NETWORK_STRIDE].contains(&output_stride) {
        return Err(GraphError::UnsupportedOutputStride(output_stride));
    }
    // entry conv + max pool
    let mut current = 4;
    let mut rate = 1;
    Ok([0, 1, 2].map(|_| {
        if current >= output_stride {
            let down_rate = rate;
            rate *= 2;
            StageSchedule {
                down_stride: 1,
                down_rate,
                unit_rate: rate,
            }
        } else {
            current *= 2;
            StageSchedule {
                down_stride: 2,
                down_rate: rate,
                unit_rate: rate,
            }
        }
    }))
}

/// Feature extractor for output stride 8, 16, or the unmodified 32.
/// Returns the last node and its channel count.
pub fn build_backbone_for_stride(
    b: &mut GraphBuilder,
    depth_multiplier: f64,
    output_stride: usize,
) -> Result<(NodeId, usize)> {
    let schedule = stage_schedule(output_stride)?;
    let x = b.conv_bn("entry/conv", b.input(), ENTRY_CHANNELS, 3, 2, (1, 1), true);
    let mut x = b.add(
        "entry/maxpool",
        LayerKind::MaxPool {
            kernel: 3,
            stride: 2,
        },
        &[x],
    );
    let mut channels = ENTRY_CHANNELS;
    for (i, sched) in schedule.iter().enumerate() {
        let stage = i + 2;
        let width = scale_even(STAGE_WIDTHS[i], depth_multiplier);
        x = build_downsample_unit(
            b,
            &format!("stage{stage}/unit1"),
            x,
            channels,
            width,
            sched.down_stride,
            sched.down_rate,
        )?;
        channels = width;
        for u in 0..STAGE_REPEATS[i] {
            x = build_basic_unit(
                b,
                &format!("stage{stage}/unit{}", u + 2),
                x,
                channels,
                sched.unit_rate,
            )?;
        }
    }
    Ok((x, channels))
}

pub fn build_backbone(b: &mut GraphBuilder, spec: &NetworkSpec) -> Result<(NodeId, usize)> {
    spec.validate()?;
    build_backbone_for_stride(b, spec.depth_multiplier, spec.output_stride)
}

/// Image-level features: global pool, 1x1 conv, broadcast back.
fn image_pooling_branch(b: &mut GraphBuilder, x: NodeId) -> NodeId {
    let p = b.add("head/image_pool/gap", LayerKind::GlobalAvgPool, &[x]);
    let p = b.conv_bn("head/image_pool/conv", p, HEAD_DEPTH, 1, 1, (1, 1), true);
    b.add(
        "head/image_pool/resize",
        LayerKind::Resize {
            target: ResizeTarget::SameAs(x),
            align_corners: true,
        },
        &[p],
    )
}

/// Encoder head. Both variants end in a concat of a 256-wide feature
/// branch and the 256-wide image pooling branch (512 channels).
pub fn build_head(b: &mut GraphBuilder, spec: &NetworkSpec, x: NodeId) -> Result<(NodeId, usize)> {
    spec.validate()?;
    let features = match spec.head {
        HeadKind::Basic => b.conv_bn("head/conv", x, HEAD_DEPTH, 1, 1, (1, 1), true),
        HeadKind::Dpc => {
            let mut outs: Vec<NodeId> = Vec::with_capacity(spec.dpc_branches.len());
            for (i, br) in spec.dpc_branches.iter().enumerate() {
                let src = if br.input_ref < 0 {
                    x
                } else {
                    outs[br.input_ref as usize]
                };
                let scope = format!("head/dpc/branch{i}");
                let d = b.dw_bn(&format!("{scope}/dw"), src, 1, br.rate, true);
                outs.push(b.conv_bn(&format!("{scope}/pw"), d, br.width, 1, 1, (1, 1), true));
            }
            let cat = b.add("head/dpc/concat", LayerKind::Concat, &outs);
            b.conv_bn("head/dpc/projection", cat, HEAD_DEPTH, 1, 1, (1, 1), true)
        }
    };
    let pool = image_pooling_branch(b, x);
    let out = b.add("head/concat", LayerKind::Concat, &[features, pool]);
    Ok((out, 2 * HEAD_DEPTH))
}

/// 1x1 to 256, 1x1 to classes, dropout, bilinear up to the image size,
/// argmax. Returns the argmax node.
pub fn build_exit_flow(b: &mut GraphBuilder, spec: &NetworkSpec, x: NodeId) -> NodeId {
    let x = b.conv_bn("exit/conv", x, HEAD_DEPTH, 1, 1, (1, 1), true);
    let logits = b.add(
        "exit/logits",
        LayerKind::Conv {
            out_channels: spec.num_classes,
            kernel: [1, 1],
            stride: [1, 1],
            rate: [1, 1],
            groups: 1,
            bias: true,
        },
        &[x],
    );
    let drop = b.add(
        "exit/dropout",
        LayerKind::Dropout {
            keep_prob: spec.dropout_keep_prob,
        },
        &[logits],
    );
    let up = b.add(
        "decoder/resize",
        LayerKind::Resize {
            target: ResizeTarget::SameAs(b.input()),
            align_corners: true,
        },
        &[drop],
    );
    b.add("output/argmax", LayerKind::ArgMax, &[up])
}

pub fn build_network(spec: &NetworkSpec) -> Result<Graph> {
    spec.validate()?;
    let mut b = GraphBuilder::new(3);
    let (features, _) = build_backbone(&mut b, spec)?;
    let (head, _) = build_head(&mut b, spec, features)?;
    let out = build_exit_flow(&mut b, spec, head);
    b.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::infer_shapes;
    use crate::tensor::Shape;

    #[test]
    fn schedules() {
        let s16 = stage_schedule(16).unwrap();
        assert_eq!(
            s16[1],
            StageSchedule {
                down_stride: 2,
                down_rate: 1,
                unit_rate: 1
            }
        );
        assert_eq!(
            s16[2],
            StageSchedule {
                down_stride: 1,
                down_rate: 1,
                unit_rate: 2
            }
        );
        let s8 = stage_schedule(8).unwrap();
        assert_eq!(
            s8[1],
            StageSchedule {
                down_stride: 1,
                down_rate: 1,
                unit_rate: 2
            }
        );
        assert_eq!(
            s8[2],
            StageSchedule {
                down_stride: 1,
                down_rate: 2,
                unit_rate: 4
            }
        );
        assert!(stage_schedule(32)
            .unwrap()
            .iter()
            .all(|s| s.down_stride == 2 && s.unit_rate == 1));
        assert!(stage_schedule(4).is_err());
    }

    fn unit_graph(
        channels: usize,
        f: impl FnOnce(&mut GraphBuilder, NodeId) -> Result<NodeId>,
    ) -> Result<Graph> {
        let mut b = GraphBuilder::new(channels);
        let x = b.input();
        let out = f(&mut b, x)?;
        b.finish(out)
    }

    #[test]
    fn basic_unit_keeps_shape() {
        for (c, rate) in [(116, 1), (464, 2)] {
            let g = unit_graph(c, |b, x| build_basic_unit(b, "u", x, c, rate)).unwrap();
            let t = infer_shapes(&g, Shape::new(1, c, 49, 49).unwrap()).unwrap();
            assert_eq!(t.get(g.output()).0, [1, c, 49, 49]);
        }
    }

    #[test]
    fn basic_unit_odd_channels_rejected() {
        assert!(matches!(
            unit_graph(7, |b, x| build_basic_unit(b, "u", x, 7, 1)),
            Err(GraphError::OddChannels { channels: 7, .. })
        ));
    }

    #[test]
    fn downsample_unit_shapes() {
        let g = unit_graph(24, |b, x| build_downsample_unit(b, "d", x, 24, 116, 2, 1)).unwrap();
        let t = infer_shapes(&g, Shape::new(1, 24, 193, 193).unwrap()).unwrap();
        assert_eq!(t.get(g.output()).0, [1, 116, 97, 97]);

        let g = unit_graph(232, |b, x| build_downsample_unit(b, "d", x, 232, 464, 1, 1)).unwrap();
        let t = infer_shapes(&g, Shape::new(1, 232, 49, 49).unwrap()).unwrap();
        assert_eq!(t.get(g.output()).0, [1, 464, 49, 49]);

        assert!(unit_graph(24, |b, x| build_downsample_unit(b, "d", x, 24, 115, 2, 1)).is_err());
    }

    #[test]
    fn stride_one_downsample_preserves_any_size() {
        let g = unit_graph(8, |b, x| build_downsample_unit(b, "d", x, 8, 12, 1, 3)).unwrap();
        for (h, w) in [(1, 1), (5, 8), (13, 2), (31, 31)] {
            let t = infer_shapes(&g, Shape::new(1, 8, h, w).unwrap()).unwrap();
            assert_eq!(t.get(g.output()).0, [1, 12, h, w]);
        }
    }

    #[test]
    fn dpc_branch_wiring_follows_input_refs() {
        let g = build_network(&NetworkSpec::default()).unwrap();
        let src = |i: usize| {
            let dw = g.find(&format!("head/dpc/branch{i}/dw")).unwrap();
            g.node(dw.inputs[0]).name.clone()
        };
        assert_eq!(src(0), "stage4/unit4/shuffle");
        assert_eq!(src(1), "head/dpc/branch0/pw/relu");
        assert_eq!(src(2), "head/dpc/branch1/pw/relu");
        assert_eq!(src(3), "head/dpc/branch0/pw/relu");
        assert_eq!(src(4), "head/dpc/branch0/pw/relu");
    }
}
