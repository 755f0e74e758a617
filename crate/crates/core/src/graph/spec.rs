use serde::{Deserialize, Serialize};

use super::{GraphError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// 1x1 conv branch plus image-level pooling branch, no atrous convs.
    Basic,
    /// Dense prediction cell: separable atrous branches plus image pooling.
    Dpc,
}

/// One separable 3x3 branch of the dense prediction cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpcBranchSpec {
    /// Index of the branch feeding this one, or -1 for the head input.
    pub input_ref: i64,
    pub rate: (usize, usize),
    pub width: usize,
}

impl DpcBranchSpec {
    pub const fn new(input_ref: i64, rate: (usize, usize)) -> Self {
        DpcBranchSpec {
            input_ref,
            rate,
            width: 256,
        }
    }
}

/// Cell found by architecture search on Cityscapes for the MobileNet-V2
/// backbone. Branches 1, 3 and 4 read branch 0, branch 2 reads branch 1.
pub const DEFAULT_DPC_BRANCHES: [DpcBranchSpec; 5] = [
    DpcBranchSpec::new(-1, (1, 6)),
    DpcBranchSpec::new(0, (18, 15)),
    DpcBranchSpec::new(1, (6, 3)),
    DpcBranchSpec::new(0, (1, 1)),
    DpcBranchSpec::new(0, (6, 21)),
];

pub const NOMINAL_NETWORK_STRIDE: usize = 32;
pub const ENTRY_CHANNELS: usize = 24;
pub const STAGE_WIDTHS: [usize; 3] = [116, 232, 464];
/// Basic units after the downsampling unit of stages 2, 3 and 4.
pub const STAGE_REPEATS: [usize; 3] = [3, 7, 3];
/// Width of every head branch and of the exit-flow reduction.
pub const HEAD_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub output_stride: usize,
    pub depth_multiplier: f64,
    pub head: HeadKind,
    pub num_classes: usize,
    /// `(height, width)`
    pub input_size: (usize, usize),
    pub dropout_keep_prob: f32,
    pub dpc_branches: Vec<DpcBranchSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            output_stride: 16,
            depth_multiplier: 1.0,
            head: HeadKind::Dpc,
            num_classes: 19,
            input_size: (769, 769),
            dropout_keep_prob: 0.9,
            dpc_branches: DEFAULT_DPC_BRANCHES.to_vec(),
        }
    }
}

impl NetworkSpec {
    pub fn with_head(head: HeadKind) -> Self {
        NetworkSpec {
            head,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_stride != 8 && self.output_stride != 16 {
            return Err(GraphError::UnsupportedOutputStride(self.output_stride));
        }
        if !(self.depth_multiplier > 0.0 && self.depth_multiplier.is_finite()) {
            return Err(GraphError::Spec(format!(
                "depth multiplier {} must be positive",
                self.depth_multiplier
            )));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(GraphError::Spec(format!(
                "num_classes {} outside 2..=255",
                self.num_classes
            )));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(GraphError::Spec("input size must be positive".into()));
        }
        if !(self.dropout_keep_prob > 0.0 && self.dropout_keep_prob <= 1.0) {
            return Err(GraphError::Spec(format!(
                "dropout keep probability {} outside (0, 1]",
                self.dropout_keep_prob
            )));
        }
        if self.head == HeadKind::Dpc {
            if self.dpc_branches.is_empty() {
                return Err(GraphError::Spec(
                    "dense prediction cell needs at least one branch".into(),
                ));
            }
            for (i, b) in self.dpc_branches.iter().enumerate() {
                if b.input_ref < -1 || b.input_ref >= i as i64 {
                    return Err(GraphError::DpcReference {
                        branch: i,
                        input_ref: b.input_ref,
                    });
                }
                if b.width == 0 || b.rate.0 == 0 || b.rate.1 == 0 {
                    return Err(GraphError::Spec(format!(
                        "branch {i} has zero width or rate"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stage output widths scaled by the depth multiplier, rounded to the
    /// nearest even number (units split their channels in half).
    pub fn stage_widths(&self) -> [usize; 3] {
        STAGE_WIDTHS.map(|w| scale_even(w, self.depth_multiplier))
    }
}

pub fn scale_even(width: usize, multiplier: f64) -> usize {
    let scaled = (width as f64 * multiplier / 2.0).round() as usize * 2;
    scaled.max(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let spec = NetworkSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.stage_widths(), [116, 232, 464]);
        assert_eq!(spec.dpc_branches.len(), 5);
    }

    #[test]
    fn rejects_output_stride_32() {
        let spec = NetworkSpec {
            output_stride: 32,
            ..Default::default()
        };
        assert_eq!(
            spec.validate(),
            Err(GraphError::UnsupportedOutputStride(32))
        );
    }

    #[test]
    fn rejects_cyclic_branch_reference() {
        let mut spec = NetworkSpec::default();
        spec.dpc_branches[1].input_ref = 1;
        assert!(matches!(
            spec.validate(),
            Err(GraphError::DpcReference {
                branch: 1,
                input_ref: 1
            })
        ));
        spec.dpc_branches[1].input_ref = 3;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn multiplier_rounds_to_even() {
        assert_eq!(scale_even(116, 0.5), 58);
        assert_eq!(scale_even(232, 0.5), 116);
        assert_eq!(scale_even(116, 1.5), 174);
        assert_eq!(scale_even(24, 0.33), 8);
    }
}
