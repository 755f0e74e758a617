//! Confusion matrix and intersection-over-union metrics with ignore handling.

use thiserror::Error;

use crate::labels::{LabelMap, IGNORE_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction is {pred_h}x{pred_w} but ground truth is {gt_h}x{gt_w}")]
    ShapeMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("{which} label {value} at pixel {index} is outside 0..{classes}")]
    OutOfRange {
        which: &'static str,
        value: u8,
        index: usize,
        classes: usize,
    },
    #[error("matrices have {0} and {1} classes")]
    ClassCount(usize, usize),
    #[error("invalid grouping: {0}")]
    Grouping(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `counts[gt * K + pred]`; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        assert!(num_classes > 0, "at least one class");
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            ignored: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored
    }

    /// Pixels counted in the matrix (excludes ignored ones).
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Ground-truth ignore pixels are counted separately;
    /// any other out-of-range value is an error and leaves `self` unchanged.
    pub fn update(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(MetricsError::ShapeMismatch {
                pred_h: pred.height(),
                pred_w: pred.width(),
                gt_h: gt.height(),
                gt_w: gt.width(),
            });
        }
        let k = self.num_classes;
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if g != IGNORE_LABEL && g as usize >= k {
                return Err(MetricsError::OutOfRange {
                    which: "ground-truth",
                    value: g,
                    index: i,
                    classes: k,
                });
            }
            if g != IGNORE_LABEL && p as usize >= k {
                return Err(MetricsError::OutOfRange {
                    which: "predicted",
                    value: p,
                    index: i,
                    classes: k,
                });
            }
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE_LABEL {
                self.ignored += 1;
            } else {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(MetricsError::ClassCount(
                self.num_classes,
                other.num_classes,
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// Per-class IOU; `None` where the class is absent from both prediction
    /// and ground truth.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..k).map(|g| self.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over classes with a non-empty union; `None` when there are none.
    pub fn mean_iou(&self) -> Option<f64> {
        mean_present(&self.class_iou())
    }

    /// IOU per category after collapsing classes through `grouping`.
    pub fn category_iou(&self, grouping: &Grouping) -> Result<Vec<Option<f64>>> {
        Ok(self.collapse(grouping)?.class_iou())
    }

    /// The matrix that would result from relabelling pred and gt through
    /// `grouping` before accumulation.
    pub fn collapse(&self, grouping: &Grouping) -> Result<ConfusionMatrix> {
        if grouping.class_to_category.len() != self.num_classes {
            return Err(MetricsError::Grouping(format!(
                "grouping covers {} classes, matrix has {}",
                grouping.class_to_category.len(),
                self.num_classes
            )));
        }
        let mut out = ConfusionMatrix::new(grouping.num_categories());
        out.ignored = self.ignored;
        for g in 0..self.num_classes {
            for p in 0..self.num_classes {
                let (cg, cp) = (grouping.class_to_category[g], grouping.class_to_category[p]);
                out.counts[cg * out.num_classes + cp] += self.get(g, p);
            }
        }
        Ok(out)
    }
}

pub fn mean_present(ious: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Total map from class ids to category ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    class_to_category: Vec<usize>,
    names: Vec<String>,
}

impl Grouping {
    /// `categories[j]` lists the classes in category `j`; every class in
    /// `0..num_classes` must appear exactly once.
    pub fn new(num_classes: usize, categories: &[(String, Vec<usize>)]) -> Result<Self> {
        let mut map = vec![usize::MAX; num_classes];
        for (j, (name, classes)) in categories.iter().enumerate() {
            for &c in classes {
                if c >= num_classes {
                    return Err(MetricsError::Grouping(format!(
                        "class {c} in `{name}` is outside 0..{num_classes}"
                    )));
                }
                if map[c] != usize::MAX {
                    return Err(MetricsError::Grouping(format!("class {c} assigned twice")));
                }
                map[c] = j;
            }
        }
        if let Some(c) = map.iter().position(|&m| m == usize::MAX) {
            return Err(MetricsError::Grouping(format!("class {c} has no category")));
        }
        if let Some(j) = (0..categories.len()).find(|j| !map.contains(j)) {
            return Err(MetricsError::Grouping(format!(
                "category `{}` is empty",
                categories[j].0
            )));
        }
        Ok(Grouping {
            class_to_category: map,
            names: categories.iter().map(|(n, _)| n.clone()).collect(),
        })
    }

    pub fn identity(num_classes: usize) -> Self {
        Grouping {
            class_to_category: (0..num_classes).collect(),
            names: (0..num_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn cityscapes() -> Self {
        let cats: Vec<(String, Vec<usize>)> = crate::data::CITYSCAPES_CATEGORIES
            .iter()
            .map(|(n, ids)| (n.to_string(), ids.iter().map(|&i| i as usize).collect()))
            .collect();
        Grouping::new(19, &cats).expect("built-in grouping is total")
    }

    /// Parses `class_id category_name` lines; blank lines and `#` comments
    /// are skipped. Categories are numbered in order of first appearance.
    pub fn parse(num_classes: usize, text: &str) -> Result<Self> {
        let mut cats: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, name) = line.split_once(char::is_whitespace).ok_or_else(|| {
                MetricsError::Grouping(format!("line {}: expected `class_id category`", i + 1))
            })?;
            let id: usize = id.parse().map_err(|_| {
                MetricsError::Grouping(format!("line {}: `{id}` is not a class id", i + 1))
            })?;
            let name = name.trim().to_string();
            match cats.iter_mut().find(|(n, _)| *n == name) {
                Some((_, ids)) => ids.push(id),
                None => cats.push((name, vec![id])),
            }
        }
        Grouping::new(num_classes, &cats)
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn category_of(&self, class: usize) -> usize {
        self.class_to_category[class]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(data: &[u8]) -> LabelMap {
        LabelMap::new(1, data.len(), data.to_vec()).unwrap()
    }

    #[test]
    fn toy_counts_and_iou() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&lm(&[0, 1, 1, 1]), &lm(&[0, 0, 1, 1])).unwrap();
        assert_eq!(
            [cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)],
            [1, 1, 0, 2]
        );
        let iou = cm.class_iou();
        assert_eq!(iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((cm.mean_iou().unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_disjoint() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&lm(&[0, 2, 2]), &lm(&[0, 2, 2])).unwrap();
        assert_eq!(cm.class_iou(), vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(cm.mean_iou(), Some(1.0));
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&lm(&[0, 0]), &lm(&[1, 1])).unwrap();
        assert_eq!(cm.mean_iou(), Some(0.0));
    }

    #[test]
    fn ignore_pixels_counted_apart() {
        let mut cm = ConfusionMatrix::new(4);
        cm.update(&lm(&[3, 200, 1]), &lm(&[255, 255, 255])).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.ignored_pixels(), 3);
        assert_eq!(cm.mean_iou(), None);
    }

    #[test]
    fn out_of_range_rejected_without_partial_update() {
        let mut cm = ConfusionMatrix::new(2);
        let err = cm.update(&lm(&[0, 5]), &lm(&[0, 1])).unwrap_err();
        assert!(matches!(err, MetricsError::OutOfRange { value: 5, .. }));
        assert_eq!(cm.total(), 0);
        assert!(cm.update(&lm(&[0]), &lm(&[0, 1])).is_err());
    }

    #[test]
    fn merge_sums() {
        let mut a = ConfusionMatrix::new(2);
        a.update(&lm(&[0, 1]), &lm(&[0, 255])).unwrap();
        let mut b = ConfusionMatrix::new(2);
        b.update(&lm(&[1]), &lm(&[1])).unwrap();
        let mut both = ConfusionMatrix::new(2);
        both.update(&lm(&[0, 1, 1]), &lm(&[0, 255, 1])).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, both);
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn identity_and_all_to_one_grouping() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&lm(&[0, 1, 2, 2]), &lm(&[0, 2, 2, 1])).unwrap();
        assert_eq!(
            cm.category_iou(&Grouping::identity(3)).unwrap(),
            cm.class_iou()
        );
        let one = Grouping::new(3, &[("all".into(), vec![0, 1, 2])]).unwrap();
        assert_eq!(cm.category_iou(&one).unwrap(), vec![Some(1.0)]);
    }

    #[test]
    fn grouping_must_be_total() {
        assert!(Grouping::new(3, &[("a".into(), vec![0, 1])]).is_err());
        assert!(Grouping::new(2, &[("a".into(), vec![0, 1]), ("b".into(), vec![1])]).is_err());
        assert!(Grouping::new(2, &[("a".into(), vec![0, 2])]).is_err());
        let g = Grouping::parse(4, "0 flat\n1 flat\n# x\n2 thing\n3 thing\n").unwrap();
        assert_eq!(g.names(), ["flat", "thing"]);
        assert_eq!(g.category_of(3), 1);
        assert_eq!(Grouping::cityscapes().num_categories(), 7);
    }
}
