//! Static cost analysis: multiply-accumulates, FLOPs under two counting
//! conventions, parameter counts and a memory-access estimate per node,
//! plus a lint for the four ShuffleNet V2 efficiency guidelines.
//!
//! Counting rules (per batch element):
//! - convolution MACs = `out_h * out_w * c_out * c_in_per_group * k_h * k_w`
//! - bias add, ReLU, pooling, resize and argmax: one op per output element
//! - unfolded batch norm: two ops per element
//! - split, shuffle, concat and inference dropout move data only
//!
//! `flops` counts a MAC as two operations (multiply and add), the
//! convention of framework profilers; `flops_1mac` counts it as one.
//!
//! The memory-access estimate counts elements read and written: input and
//! output activations plus the weights. For a stride-1 1x1 convolution this
//! is `h * w * (c_in + c_out) + c_in * c_out`.

use std::fmt::Write as _;

use crate::graph::{infer_shapes, Graph, GraphError, LayerKind, NodeId};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostScope {
    /// Everything up to the class logits; omits the decoder resize and argmax.
    Backbone,
    /// Every node including the decoder.
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphForm {
    /// Batch norms are separate nodes.
    Unfolded,
    /// Batch norms absorbed into convolutions.
    Folded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub id: NodeId,
    pub name: String,
    pub op: &'static str,
    pub output: Shape,
    pub macs: u64,
    /// Two ops per MAC plus non-MAC ops.
    pub flops: u64,
    /// One op per MAC plus non-MAC ops.
    pub flops_1mac: u64,
    pub params: u64,
    pub mem_access: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostTotals {
    pub macs: u64,
    pub flops: u64,
    pub flops_1mac: u64,
    pub params: u64,
    pub mem_access: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub totals: CostTotals,
    pub input: Shape,
    pub scope: CostScope,
    pub form: GraphForm,
}

fn numel_per_item(s: Shape) -> u64 {
    (s.c() * s.h() * s.w()) as u64
}

/// Nodes excluded by [`CostScope::Backbone`].
fn decoder_nodes(graph: &Graph) -> Vec<NodeId> {
    let mut out = Vec::new();
    let last = graph.node(graph.output());
    if last.kind == LayerKind::ArgMax {
        out.push(last.id);
    }
    let logits = graph.node(graph.logits_node());
    if matches!(logits.kind, LayerKind::Resize { .. }) {
        out.push(logits.id);
    }
    out
}

pub fn count_costs(
    graph: &Graph,
    input: Shape,
    scope: CostScope,
) -> Result<CostReport, GraphError> {
    let shapes = infer_shapes(graph, input)?;
    let skip = match scope {
        CostScope::Backbone => decoder_nodes(graph),
        CostScope::Full => Vec::new(),
    };
    let mut rows = Vec::new();
    let mut totals = CostTotals::default();
    for node in graph.nodes() {
        if skip.contains(&node.id) {
            continue;
        }
        let out = shapes.get(node.id);
        let out_el = numel_per_item(out);
        let in_el: u64 = node
            .inputs
            .iter()
            .map(|i| numel_per_item(shapes.get(*i)))
            .sum();
        let in_c = node
            .inputs
            .first()
            .map(|i| shapes.get(*i).c() as u64)
            .unwrap_or(0);
        let (macs, other_ops, params, mem) = match &node.kind {
            LayerKind::Input { .. } => (0, 0, 0, 0),
            LayerKind::Conv {
                kernel,
                groups,
                bias,
                ..
            } => {
                let per_out = in_c / *groups as u64 * (kernel[0] * kernel[1]) as u64;
                let kparams = out.c() as u64 * per_out;
                let b = if *bias { out.c() as u64 } else { 0 };
                let bias_ops = if *bias { out_el } else { 0 };
                (
                    out_el * per_out,
                    bias_ops,
                    kparams + b,
                    in_el + out_el + kparams + b,
                )
            }
            LayerKind::DepthwiseConv { kernel, bias, .. } => {
                let per_out = (kernel[0] * kernel[1]) as u64;
                let kparams = in_c * per_out;
                let b = if *bias { in_c } else { 0 };
                let bias_ops = if *bias { out_el } else { 0 };
                (
                    out_el * per_out,
                    bias_ops,
                    kparams + b,
                    in_el + out_el + kparams + b,
                )
            }
            LayerKind::BatchNorm => (0, 2 * out_el, 4 * in_c, in_el + out_el + 4 * in_c),
            LayerKind::Relu
            | LayerKind::MaxPool { .. }
            | LayerKind::GlobalAvgPool
            | LayerKind::Resize { .. }
            | LayerKind::ArgMax => (0, out_el, 0, in_el + out_el),
            LayerKind::Split { .. }
            | LayerKind::Shuffle { .. }
            | LayerKind::Concat
            | LayerKind::Dropout { .. } => (0, 0, 0, in_el + out_el),
        };
        let row = CostRow {
            id: node.id,
            name: node.name.clone(),
            op: node.kind.tag(),
            output: out,
            macs,
            flops: 2 * macs + other_ops,
            flops_1mac: macs + other_ops,
            params,
            mem_access: mem,
        };
        totals.macs += row.macs;
        totals.flops += row.flops;
        totals.flops_1mac += row.flops_1mac;
        totals.params += row.params;
        totals.mem_access += row.mem_access;
        rows.push(row);
    }
    let form = if graph.count_kind("bn") > 0 {
        GraphForm::Unfolded
    } else {
        GraphForm::Folded
    };
    Ok(CostReport {
        rows,
        totals,
        input,
        scope,
        form,
    })
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.totals.flops as f64 / 1e9
    }

    pub fn gflops_1mac(&self) -> f64 {
        self.totals.flops_1mac as f64 / 1e9
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,name,op,output,macs,flops,flops_1mac,params,mem_access\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.id.0,
                r.name,
                r.op,
                r.output,
                r.macs,
                r.flops,
                r.flops_1mac,
                r.params,
                r.mem_access
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            ",total,,,{},{},{},{},{}",
            t.macs, t.flops, t.flops_1mac, t.params, t.mem_access
        );
        s
    }

    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<8} {:>16} {:>14} {:>14} {:>14} {:>10} {:>14}",
            "layer", "op", "output", "MACs", "FLOPs", "FLOPs(1xMAC)", "params", "mem access"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<8} {:>16} {:>14} {:>14} {:>14} {:>10} {:>14}",
                r.name,
                r.op,
                r.output.to_string(),
                r.macs,
                r.flops,
                r.flops_1mac,
                r.params,
                r.mem_access
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<8} {:>16} {:>14} {:>14} {:>14} {:>10} {:>14}",
            "total", "", "", t.macs, t.flops, t.flops_1mac, t.params, t.mem_access
        );
        let _ = writeln!(
            s,
            "input {}  scope {:?}  graph {:?}  GFLOPs {:.3} (1xMAC {:.3})  params {:.3} M",
            self.input,
            self.scope,
            self.form,
            self.gflops(),
            self.gflops_1mac(),
            t.params as f64 / 1e6
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Guideline {
    /// Equal input and output widths minimize memory access.
    G1EqualWidths,
    /// Group convolutions raise memory access.
    G2GroupConv,
    /// Fragmentation reduces parallelism.
    G3Fragmentation,
    /// Element-wise operations are not free.
    G4ElementWise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub rule: Guideline,
    pub node: NodeId,
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LintReport {
    pub findings: Vec<Finding>,
    pub elementwise_nodes: usize,
}

impl LintReport {
    pub fn count(&self, rule: Guideline) -> usize {
        self.findings.iter().filter(|f| f.rule == rule).count()
    }

    pub fn flags(&self, rule: Guideline, name: &str) -> bool {
        self.findings
            .iter()
            .any(|f| f.rule == rule && f.name == name)
    }
}

/// Flags convolutions with unequal widths (G1), grouped convolutions with
/// more than two groups (G2; depthwise convolutions are exempt), nodes
/// feeding more than two consumers (G3), and counts element-wise nodes (G4).
pub fn lint_guidelines(graph: &Graph) -> Result<LintReport, GraphError> {
    let probe = Shape::new(1, graph.input_channels(), 1, 1)?;
    let shapes = infer_shapes(graph, probe)?;
    let fan_out = graph.fan_out();
    let mut report = LintReport::default();
    for node in graph.nodes() {
        let mut flag = |rule, message: String| {
            report.findings.push(Finding {
                rule,
                node: node.id,
                name: node.name.clone(),
                message,
            })
        };
        if let LayerKind::Conv {
            out_channels,
            groups,
            ..
        } = node.kind
        {
            let in_c = shapes.get(node.inputs[0]).c();
            if in_c != out_channels {
                flag(
                    Guideline::G1EqualWidths,
                    format!("{in_c} -> {out_channels} channels"),
                );
            }
            if groups > 2 && !(groups == in_c && out_channels == in_c) {
                flag(Guideline::G2GroupConv, format!("{groups} groups"));
            }
        }
        if fan_out[node.id.0] > 2 {
            flag(
                Guideline::G3Fragmentation,
                format!("fan-out {}", fan_out[node.id.0]),
            );
        }
        if matches!(node.kind, LayerKind::Relu | LayerKind::BatchNorm) {
            report.elementwise_nodes += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, GraphBuilder, HeadKind, NetworkSpec};

    #[test]
    fn single_pointwise_conv_closed_form() {
        let mut b = GraphBuilder::new(8);
        let c = b.add(
            "pw",
            LayerKind::Conv {
                out_channels: 8,
                kernel: [1, 1],
                stride: [1, 1],
                rate: [1, 1],
                groups: 1,
                bias: false,
            },
            &[b.input()],
        );
        let g = b.finish(c).unwrap();
        let r = count_costs(&g, Shape::new(1, 8, 4, 4).unwrap(), CostScope::Full).unwrap();
        assert_eq!(r.totals.macs, 1024);
        assert_eq!(r.totals.flops, 2048);
        assert_eq!(r.totals.flops_1mac, 1024);
        assert_eq!(r.rows[1].mem_access, 4 * 4 * (8 + 8) + 64);
        assert_eq!(r.form, GraphForm::Folded);
    }

    #[test]
    fn totals_equal_row_sums() {
        let g = build_network(&NetworkSpec::default()).unwrap();
        let r = count_costs(&g, Shape::new(1, 3, 96, 128).unwrap(), CostScope::Full).unwrap();
        let sum = |f: fn(&CostRow) -> u64| r.rows.iter().map(f).sum::<u64>();
        assert_eq!(sum(|x| x.macs), r.totals.macs);
        assert_eq!(sum(|x| x.flops), r.totals.flops);
        assert_eq!(sum(|x| x.params), r.totals.params);
        assert_eq!(sum(|x| x.mem_access), r.totals.mem_access);
        assert_eq!(r.form, GraphForm::Unfolded);
    }

    #[test]
    fn backbone_scope_drops_decoder() {
        let g = build_network(&NetworkSpec::default()).unwrap();
        let input = Shape::new(1, 3, 64, 64).unwrap();
        let full = count_costs(&g, input, CostScope::Full).unwrap();
        let enc = count_costs(&g, input, CostScope::Backbone).unwrap();
        assert_eq!(full.rows.len(), enc.rows.len() + 2);
        assert_eq!(full.totals.macs, enc.totals.macs);
        // resize: 19 x 64 x 64, argmax: 64 x 64
        assert_eq!(full.totals.flops - enc.totals.flops, 19 * 64 * 64 + 64 * 64);
    }

    #[test]
    fn lint_examples() {
        let g = build_network(&NetworkSpec::with_head(HeadKind::Basic)).unwrap();
        let l = lint_guidelines(&g).unwrap();
        assert!(!l.findings.iter().any(|f| f.name.contains("unit2/right/pw")));
        assert!(l.flags(Guideline::G1EqualWidths, "exit/conv"));
        assert!(l.flags(Guideline::G1EqualWidths, "entry/conv"));
        assert_eq!(l.count(Guideline::G2GroupConv), 0);
        assert!(l.elementwise_nodes > 0);
    }

    #[test]
    fn csv_has_header_rows_and_total() {
        let g = build_network(&NetworkSpec::with_head(HeadKind::Basic)).unwrap();
        let r = count_costs(&g, Shape::new(1, 3, 32, 32).unwrap(), CostScope::Full).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), r.rows.len() + 2);
        assert!(csv.lines().last().unwrap().starts_with(",total,"));
        assert!(r.to_table().contains("GFLOPs"));
    }
}
