//! Weight manifest: named `f32` blobs plus metadata, stored as a JSON
//! manifest (`<stem>.manifest`) next to a raw little-endian blob
//! (`<stem>.bin`).
//!
//! Entry names follow the graph node names (see [`crate::graph::builder`]):
//! `<node>/weights`, `<node>/bias`, `<node>/batch_norm/{gamma,beta,moving_mean,moving_variance}`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, LayerKind, LayerNode, NodeId, ParamSpec, ResizeTarget};
use crate::ops::conv::DEFAULT_BN_EPSILON;
use crate::ops::{batch_norm_fold, BatchNormParams, ConvParams};
use crate::tensor::{Tensor, TensorError};

pub const FORMAT_TAG: &str = "shufseg-weights/1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("missing weight entry `{0}`")]
    Missing(String),
    #[error("entry `{name}` has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("entry `{0}` fails its checksum")]
    Checksum(String),
    #[error("entry `{name}`: {reason}")]
    Layout { name: String, reason: String },
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("batch norm `{0}` cannot be folded: {1}")]
    Fold(String, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, WeightsError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
    /// CRC32 of the entry's little-endian bytes, 8 hex digits.
    pub crc32: String,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub format: String,
    pub bn_epsilon: f32,
    /// Fingerprint of the graph the weights were produced for.
    pub spec_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestDocument {
    meta: ManifestMeta,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightManifest {
    meta: ManifestMeta,
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
    blob: Vec<f32>,
}

fn crc_of(values: &[f32]) -> String {
    let mut h = crc32fast::Hasher::new();
    for v in values {
        h.update(&v.to_le_bytes());
    }
    format!("{:08x}", h.finalize())
}

impl WeightManifest {
    pub fn new(bn_epsilon: f32, spec_fingerprint: impl Into<String>) -> Self {
        WeightManifest {
            meta: ManifestMeta {
                format: FORMAT_TAG.into(),
                bn_epsilon,
                spec_fingerprint: spec_fingerprint.into(),
            },
            entries: Vec::new(),
            index: HashMap::new(),
            blob: Vec::new(),
        }
    }

    /// Appends an entry at the end of the blob.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: &[f32],
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(WeightsError::Duplicate(name));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(WeightsError::Layout {
                name,
                reason: format!("{} values for shape {shape:?}", values.len()),
            });
        }
        let entry = ManifestEntry {
            name: name.clone(),
            shape,
            dtype: "f32".into(),
            offset: (self.blob.len() * 4) as u64,
            crc32: crc_of(values),
        };
        self.blob.extend_from_slice(values);
        self.index.insert(name, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn meta(&self) -> &ManifestMeta {
        &self.meta
    }

    pub fn bn_epsilon(&self) -> f32 {
        self.meta.bn_epsilon
    }

    pub fn set_bn_epsilon(&mut self, eps: f32) {
        self.meta.bn_epsilon = eps;
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn values(&self, name: &str) -> Result<&[f32]> {
        let e = self
            .entry(name)
            .ok_or_else(|| WeightsError::Missing(name.into()))?;
        let start = e.offset as usize / 4;
        Ok(&self.blob[start..start + e.numel()])
    }

    /// Values of `name`, checked against `shape`.
    pub fn values_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let e = self
            .entry(name)
            .ok_or_else(|| WeightsError::Missing(name.into()))?;
        if e.shape != shape {
            return Err(WeightsError::Shape {
                name: name.into(),
                expected: shape.to_vec(),
                actual: e.shape.clone(),
            });
        }
        self.values(name)
    }

    pub fn tensor(&self, name: &str, dims: [usize; 4]) -> Result<Tensor> {
        let v = self.values_shaped(name, &dims)?;
        Ok(Tensor::from_vec(dims, v.to_vec())?)
    }

    pub fn remove(&mut self, name: &str) -> bool {
        let Some(pos) = self.index.get(name).copied() else {
            return false;
        };
        let mut rebuilt =
            WeightManifest::new(self.meta.bn_epsilon, self.meta.spec_fingerprint.clone());
        for (i, e) in self.entries.iter().enumerate() {
            if i != pos {
                let v = self.values(&e.name).expect("own entry").to_vec();
                rebuilt
                    .push(e.name.clone(), e.shape.clone(), &v)
                    .expect("unique names");
            }
        }
        *self = rebuilt;
        true
    }

    /// Replaces an entry's shape and values in place of the old one.
    pub fn replace(&mut self, name: &str, shape: Vec<usize>, values: &[f32]) -> Result<()> {
        if let Some(&i) = self.index.get(name) {
            if self.entries[i].shape == shape && values.len() == self.entries[i].numel() {
                let start = self.entries[i].offset as usize / 4;
                self.blob[start..start + values.len()].copy_from_slice(values);
                self.entries[i].crc32 = crc_of(values);
                return Ok(());
            }
        }
        let mut rebuilt =
            WeightManifest::new(self.meta.bn_epsilon, self.meta.spec_fingerprint.clone());
        let mut found = false;
        for e in &self.entries {
            if e.name == name {
                rebuilt.push(name, shape.clone(), values)?;
                found = true;
            } else {
                let v = self.values(&e.name)?.to_vec();
                rebuilt.push(e.name.clone(), e.shape.clone(), &v)?;
            }
        }
        if !found {
            return Err(WeightsError::Missing(name.into()));
        }
        *self = rebuilt;
        Ok(())
    }

    pub fn manifest_text(&self) -> String {
        let doc = ManifestDocument {
            meta: self.meta.clone(),
            entries: self.entries.clone(),
        };
        let mut s =
            serde_json::to_string_pretty(&doc).expect("manifest serialization is infallible");
        s.push('\n');
        s
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        self.blob.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Parses and verifies a manifest against its blob: extents in range,
    /// no overlaps, checksums match.
    pub fn from_parts(manifest_text: &str, blob: &[u8]) -> Result<Self> {
        let doc: ManifestDocument = serde_json::from_str(manifest_text)
            .map_err(|e| WeightsError::Manifest(e.to_string()))?;
        if doc.meta.format != FORMAT_TAG {
            return Err(WeightsError::Manifest(format!(
                "unknown format `{}`",
                doc.meta.format
            )));
        }
        if blob.len() % 4 != 0 {
            return Err(WeightsError::Manifest(format!(
                "blob length {} is not a multiple of 4",
                blob.len()
            )));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut extents: Vec<(u64, u64, &str)> = Vec::new();
        let mut index = HashMap::new();
        for (i, e) in doc.entries.iter().enumerate() {
            if e.dtype != "f32" {
                return Err(WeightsError::Layout {
                    name: e.name.clone(),
                    reason: format!("unsupported dtype `{}`", e.dtype),
                });
            }
            if e.offset % 4 != 0 {
                return Err(WeightsError::Layout {
                    name: e.name.clone(),
                    reason: "offset not 4-byte aligned".into(),
                });
            }
            let end = e.offset + 4 * e.numel() as u64;
            if end > blob.len() as u64 {
                return Err(WeightsError::Layout {
                    name: e.name.clone(),
                    reason: format!(
                        "extent {}..{end} exceeds blob of {} bytes",
                        e.offset,
                        blob.len()
                    ),
                });
            }
            if index.insert(e.name.clone(), i).is_some() {
                return Err(WeightsError::Duplicate(e.name.clone()));
            }
            let start = e.offset as usize / 4;
            if crc_of(&floats[start..start + e.numel()]) != e.crc32 {
                return Err(WeightsError::Checksum(e.name.clone()));
            }
            extents.push((e.offset, end, &e.name));
        }
        extents.sort();
        for w in extents.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(WeightsError::Layout {
                    name: w[1].2.to_string(),
                    reason: format!("overlaps entry `{}`", w[0].2),
                });
            }
        }
        Ok(WeightManifest {
            meta: doc.meta,
            entries: doc.entries,
            index,
            blob: floats,
        })
    }

    pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        let mut m = stem.as_os_str().to_owned();
        m.push(".manifest");
        let mut b = stem.as_os_str().to_owned();
        b.push(".bin");
        (PathBuf::from(m), PathBuf::from(b))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (m, b) = Self::paths(stem);
        fs::write(&m, self.manifest_text())
            .map_err(|source| WeightsError::Io { path: m, source })?;
        fs::write(&b, self.blob_bytes()).map_err(|source| WeightsError::Io { path: b, source })?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (m, b) = Self::paths(stem);
        let text = fs::read_to_string(&m).map_err(|source| WeightsError::Io { path: m, source })?;
        let blob = fs::read(&b).map_err(|source| WeightsError::Io { path: b, source })?;
        Self::from_parts(&text, &blob)
    }

    pub fn conv_params(&self, node: &LayerNode, in_channels: usize) -> Result<ConvParams> {
        match &node.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                rate,
                groups,
                bias,
            } => {
                let k = self.tensor(
                    &format!("{}/weights", node.name),
                    [*out_channels, in_channels / groups, kernel[0], kernel[1]],
                )?;
                let b = if *bias {
                    Some(
                        self.values_shaped(&format!("{}/bias", node.name), &[*out_channels])?
                            .to_vec(),
                    )
                } else {
                    None
                };
                Ok(ConvParams::new(
                    k,
                    b,
                    (stride[0], stride[1]),
                    (rate[0], rate[1]),
                    *groups,
                )?)
            }
            LayerKind::DepthwiseConv {
                kernel,
                stride,
                rate,
                bias,
            } => {
                let k = self.tensor(
                    &format!("{}/weights", node.name),
                    [in_channels, 1, kernel[0], kernel[1]],
                )?;
                let b = if *bias {
                    Some(
                        self.values_shaped(&format!("{}/bias", node.name), &[in_channels])?
                            .to_vec(),
                    )
                } else {
                    None
                };
                Ok(ConvParams::new(
                    k,
                    b,
                    (stride[0], stride[1]),
                    (rate[0], rate[1]),
                    in_channels,
                )?)
            }
            other => Err(WeightsError::Manifest(format!(
                "node `{}` is a {}, not a convolution",
                node.name,
                other.tag()
            ))),
        }
    }

    pub fn bn_params(&self, node: &LayerNode, channels: usize) -> Result<BatchNormParams> {
        let get = |s: &str| -> Result<Vec<f32>> {
            Ok(self
                .values_shaped(&format!("{}/{s}", node.name), &[channels])?
                .to_vec())
        };
        Ok(BatchNormParams {
            gamma: get("gamma")?,
            beta: get("beta")?,
            moving_mean: get("moving_mean")?,
            moving_variance: get("moving_variance")?,
            epsilon: self.meta.bn_epsilon,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discrepancy {
    Missing {
        name: String,
        expected: Vec<usize>,
    },
    Extra {
        name: String,
    },
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::Missing { name, expected } => write!(f, "missing {name} {expected:?}"),
            Discrepancy::Extra { name } => write!(f, "extra {name}"),
            Discrepancy::ShapeMismatch {
                name,
                expected,
                actual,
            } => {
                write!(
                    f,
                    "shape mismatch {name}: expected {expected:?}, found {actual:?}"
                )
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub discrepancies: Vec<Discrepancy>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.discrepancies {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Lists every parameter the graph expects that is absent or mis-shaped,
/// and every manifest entry no node uses.
pub fn validate(manifest: &WeightManifest, graph: &Graph) -> Result<ValidationReport> {
    let specs = graph.param_specs()?;
    let mut report = ValidationReport::default();
    let mut expected_names = std::collections::HashSet::new();
    for ParamSpec { name, shape, .. } in &specs {
        expected_names.insert(name.as_str());
        match manifest.entry(name) {
            None => report.discrepancies.push(Discrepancy::Missing {
                name: name.clone(),
                expected: shape.clone(),
            }),
            Some(e) if &e.shape != shape => report.discrepancies.push(Discrepancy::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                actual: e.shape.clone(),
            }),
            Some(_) => {}
        }
    }
    for e in manifest.entries() {
        if !expected_names.contains(e.name.as_str()) {
            report.discrepancies.push(Discrepancy::Extra {
                name: e.name.clone(),
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitOptions {
    /// Draw batch-norm statistics at random instead of the identity.
    pub randomize_batch_norm: bool,
}

/// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases, identity
/// batch norm. Deterministic for a given seed.
pub fn init_random(graph: &Graph, seed: u64) -> Result<WeightManifest> {
    init_random_with(graph, seed, InitOptions::default())
}

pub fn init_random_with(graph: &Graph, seed: u64, opts: InitOptions) -> Result<WeightManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = WeightManifest::new(DEFAULT_BN_EPSILON, graph.fingerprint());
    let unit = Uniform::new(0.0f32, 1.0).expect("valid range");
    for spec in graph.param_specs()? {
        let numel: usize = spec.shape.iter().product();
        let suffix = spec.name.rsplit('/').next().unwrap_or_default();
        let values: Vec<f32> = match suffix {
            "weights" => {
                let fan_in: usize = spec.shape[1..].iter().product();
                let normal =
                    Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            }
            "bias" => vec![0.0; numel],
            "gamma" if opts.randomize_batch_norm => {
                (0..numel).map(|_| 0.5 + unit.sample(&mut rng)).collect()
            }
            "beta" if opts.randomize_batch_norm => {
                (0..numel).map(|_| unit.sample(&mut rng) - 0.5).collect()
            }
            "moving_mean" if opts.randomize_batch_norm => (0..numel)
                .map(|_| (unit.sample(&mut rng) - 0.5) * 0.4)
                .collect(),
            "moving_variance" if opts.randomize_batch_norm => {
                (0..numel).map(|_| 0.5 + unit.sample(&mut rng)).collect()
            }
            "gamma" | "moving_variance" => vec![1.0; numel],
            _ => vec![0.0; numel],
        };
        m.push(spec.name, spec.shape, &values)?;
    }
    Ok(m)
}

/// Folds every batch norm into the convolution feeding it. The returned
/// graph has no `bn` nodes and its convolutions carry biases.
pub fn fold_all(manifest: &WeightManifest, graph: &Graph) -> Result<(WeightManifest, Graph)> {
    let report = validate(manifest, graph)?;
    if let Some(d) = report
        .discrepancies
        .iter()
        .find(|d| !matches!(d, Discrepancy::Extra { .. }))
    {
        return match d {
            Discrepancy::Missing { name, .. } => Err(WeightsError::Missing(name.clone())),
            Discrepancy::ShapeMismatch {
                name,
                expected,
                actual,
            } => Err(WeightsError::Shape {
                name: name.clone(),
                expected: expected.clone(),
                actual: actual.clone(),
            }),
            Discrepancy::Extra { .. } => unreachable!(),
        };
    }

    let probe = crate::tensor::Shape::new(1, graph.input_channels(), 1, 1)?;
    let shapes = crate::graph::infer_shapes(graph, probe)?;
    let fan_out = graph.fan_out();
    let nodes = graph.nodes();

    // conv node -> bn node folded into it
    let mut folded_into: HashMap<usize, usize> = HashMap::new();
    for n in nodes {
        if n.kind == LayerKind::BatchNorm {
            let src = &nodes[n.inputs[0].0];
            if !src.kind.is_conv() {
                return Err(WeightsError::Fold(
                    n.name.clone(),
                    format!("input `{}` is not a convolution", src.name),
                ));
            }
            if fan_out[src.id.0] != 1 {
                return Err(WeightsError::Fold(
                    n.name.clone(),
                    format!("`{}` has other consumers", src.name),
                ));
            }
            folded_into.insert(src.id.0, n.id.0);
        }
    }

    // old id -> new id; a bn maps to its (renumbered) conv
    let mut remap: Vec<usize> = vec![usize::MAX; nodes.len()];
    let mut out_nodes: Vec<LayerNode> = Vec::with_capacity(nodes.len());
    let mut out_manifest = WeightManifest::new(manifest.bn_epsilon(), String::new());
    for n in nodes {
        if n.kind == LayerKind::BatchNorm {
            remap[n.id.0] = remap[n.inputs[0].0];
            continue;
        }
        let new_id = out_nodes.len();
        remap[n.id.0] = new_id;
        let mut node = n.clone();
        node.id = NodeId(new_id);
        node.inputs = n.inputs.iter().map(|i| NodeId(remap[i.0])).collect();
        if let LayerKind::Resize {
            target: ResizeTarget::SameAs(r),
            align_corners,
        } = node.kind
        {
            node.kind = LayerKind::Resize {
                target: ResizeTarget::SameAs(NodeId(remap[r.0])),
                align_corners,
            };
        }
        if n.kind.is_conv() {
            let in_c = shapes.get(n.inputs[0]).c();
            let mut params = manifest.conv_params(n, in_c)?;
            if let Some(&bn_id) = folded_into.get(&n.id.0) {
                let bn = manifest.bn_params(&nodes[bn_id], params.out_channels())?;
                params = batch_norm_fold(&params, &bn)?;
                match &mut node.kind {
                    LayerKind::Conv { bias, .. } | LayerKind::DepthwiseConv { bias, .. } => {
                        *bias = true
                    }
                    _ => unreachable!(),
                }
            }
            let kshape = params.kernel.shape().0.to_vec();
            out_manifest.push(format!("{}/weights", n.name), kshape, params.kernel.data())?;
            if let Some(b) = &params.bias {
                out_manifest.push(format!("{}/bias", n.name), vec![b.len()], b)?;
            }
        }
        out_nodes.push(node);
    }
    let out_graph = Graph::new(out_nodes, NodeId(remap[graph.output().0]))?;
    out_manifest.meta.spec_fingerprint = out_graph.fingerprint();
    Ok((out_manifest, out_graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, GraphBuilder, HeadKind, NetworkSpec};

    fn toy_graph() -> Graph {
        let mut b = GraphBuilder::new(3);
        let x = b.conv_bn("a", b.input(), 8, 3, 2, (1, 1), true);
        let x = b.dw_bn("b", x, 1, (2, 2), false);
        b.finish(x).unwrap()
    }

    #[test]
    fn random_init_validates_cleanly() {
        let g = toy_graph();
        let m = init_random(&g, 1).unwrap();
        let r = validate(&m, &g).unwrap();
        assert!(r.is_clean(), "{r}");
        assert_eq!(m.entry("a/weights").unwrap().shape, vec![8, 3, 3, 3]);
        assert_eq!(m.values("a/batch_norm/gamma").unwrap(), &[1.0; 8]);
    }

    #[test]
    fn validate_reports_missing_and_reshaped() {
        let g = toy_graph();
        let mut m = init_random(&g, 1).unwrap();
        m.remove("b/batch_norm/beta");
        let r = validate(&m, &g).unwrap();
        assert_eq!(r.discrepancies.len(), 1);
        assert_eq!(
            r.to_string().lines().next().unwrap(),
            "missing b/batch_norm/beta [8]"
        );

        let mut m = init_random(&g, 1).unwrap();
        m.replace("a/weights", vec![8, 3, 1, 9], &[0.5; 216])
            .unwrap();
        let r = validate(&m, &g).unwrap();
        assert_eq!(r.discrepancies.len(), 1);
        let line = r.to_string();
        assert!(
            line.contains("shape mismatch a/weights")
                && line.contains("[8, 3, 3, 3]")
                && line.contains("[8, 3, 1, 9]"),
            "{line}"
        );
    }

    #[test]
    fn seeds_are_deterministic() {
        let g = toy_graph();
        let a = init_random(&g, 42).unwrap();
        let b = init_random(&g, 42).unwrap();
        let c = init_random(&g, 43).unwrap();
        assert_eq!(a.blob_bytes(), b.blob_bytes());
        assert_eq!(a.manifest_text(), b.manifest_text());
        assert_ne!(
            a.entry("a/weights").unwrap().crc32,
            c.entry("a/weights").unwrap().crc32
        );
    }

    #[test]
    fn round_trip_is_byte_identical_and_checked() {
        let g = toy_graph();
        let m = init_random(&g, 3).unwrap();
        let text = m.manifest_text();
        let blob = m.blob_bytes();
        let back = WeightManifest::from_parts(&text, &blob).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.manifest_text(), text);
        assert_eq!(back.blob_bytes(), blob);

        let mut corrupt = blob.clone();
        corrupt[5] ^= 0x40;
        assert!(matches!(
            WeightManifest::from_parts(&text, &corrupt),
            Err(WeightsError::Checksum(_))
        ));
        assert!(matches!(
            WeightManifest::from_parts(&text, &blob[..blob.len() - 4]),
            Err(WeightsError::Layout { .. })
        ));
    }

    #[test]
    fn overlapping_entries_rejected() {
        let mut m = WeightManifest::new(1e-3, "x");
        m.push("a", vec![2], &[1.0, 2.0]).unwrap();
        m.push("b", vec![2], &[3.0, 4.0]).unwrap();
        let text = m.manifest_text().replace("\"offset\": 8", "\"offset\": 4");
        let blob = m.blob_bytes();
        // offset 4 for `b` reads [2.0, 3.0]; fix its crc so only the overlap is wrong
        let fixed = text.replace(&m.entry("b").unwrap().crc32, &crc_of(&[2.0, 3.0]));
        assert!(matches!(
            WeightManifest::from_parts(&fixed, &blob),
            Err(WeightsError::Layout { .. })
        ));
    }

    #[test]
    fn fold_removes_bn_nodes_and_is_idempotent() {
        let g = build_network(&NetworkSpec {
            head: HeadKind::Basic,
            ..Default::default()
        })
        .unwrap();
        let m = init_random(&g, 9).unwrap();
        let (fm, fg) = fold_all(&m, &g).unwrap();
        let bn = g.count_kind("bn");
        assert!(bn > 0);
        assert_eq!(fg.count_kind("bn"), 0);
        assert_eq!(fg.nodes().len(), g.nodes().len() - bn);
        assert!(validate(&fm, &fg).unwrap().is_clean());
        let (fm2, fg2) = fold_all(&fm, &fg).unwrap();
        assert_eq!(fg2, fg);
        assert_eq!(fm2, fm);
    }

    #[test]
    fn identity_bn_fold_keeps_kernels() {
        let g = toy_graph();
        let m = init_random(&g, 5).unwrap();
        let mut m0 = m.clone();
        m0.set_bn_epsilon(0.0);
        let (fm, _) = fold_all(&m0, &g).unwrap();
        for name in ["a/weights", "b/weights"] {
            let before = m.values(name).unwrap();
            let after = fm.values(name).unwrap();
            assert!(before.iter().zip(after).all(|(x, y)| (x - y).abs() <= 1e-7));
        }
    }

    #[test]
    fn fold_reports_missing_bn_entry() {
        let g = toy_graph();
        let mut m = init_random(&g, 5).unwrap();
        m.remove("a/batch_norm/moving_variance");
        match fold_all(&m, &g) {
            Err(WeightsError::Missing(name)) => assert_eq!(name, "a/batch_norm/moving_variance"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
