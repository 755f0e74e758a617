//! CPU inference engine, static cost analyzer and latency benchmark for a
//! ShuffleNet V2 segmentation network with atrous depthwise convolutions,
//! a basic or dense-prediction-cell encoder head, and a bilinear decoder.

pub mod analysis;
pub mod bench;
pub mod data;
pub mod graph;
pub mod labels;
pub mod metrics;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod weights;

pub use graph::{build_network, forward, Graph, HeadKind, NetworkSpec};
pub use labels::{LabelMap, IGNORE_LABEL};
pub use tensor::{Shape, Tensor};
pub use weights::WeightManifest;
