//! Training-protocol utilities: the poly learning-rate schedule with an
//! optional slow start, and the joint image/label augmentations.
//!
//! Images here are preprocessed `1 x C x H x W` tensors; labels are the
//! matching [`LabelMap`]. All randomness comes from a caller-supplied rng.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::ops::{bilinear_resize, source_coord};
use crate::tensor::{Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_initial: f64,
    pub max_iter: u64,
    pub power: f64,
    /// Steps `k < slow_start_steps` use `slow_start_lr`.
    pub slow_start_steps: u64,
    pub slow_start_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::pretrain()
    }
}

impl ScheduleConfig {
    /// COCO and coarse-annotation stages: 60K steps from 1e-3.
    pub fn pretrain() -> Self {
        ScheduleConfig {
            lr_initial: 1e-3,
            max_iter: 60_000,
            power: 0.9,
            slow_start_steps: 0,
            slow_start_lr: 0.0,
        }
    }

    /// Fine-annotation stage: 120K steps from 1e-4 after 186 steps at 1e-5.
    pub fn fine_tune() -> Self {
        ScheduleConfig {
            lr_initial: 1e-4,
            max_iter: 120_000,
            power: 0.9,
            slow_start_steps: 186,
            slow_start_lr: 1e-5,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lr_initial > 0.0) {
            return Err(format!("lr_initial must be > 0, got {}", self.lr_initial));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be > 0".into());
        }
        if !(self.power > 0.0) {
            return Err(format!("power must be > 0, got {}", self.power));
        }
        if self.slow_start_lr < 0.0 || !self.slow_start_lr.is_finite() {
            return Err(format!(
                "slow_start_lr must be >= 0, got {}",
                self.slow_start_lr
            ));
        }
        Ok(())
    }
}

/// `lr_initial * (1 - k / max_iter)^power`, or the slow-start rate for the
/// first steps. Steps past `max_iter` yield 0 with a warning.
pub fn poly_lr(k: u64, cfg: &ScheduleConfig) -> f64 {
    if k > cfg.max_iter {
        log::warn!(
            "step {k} exceeds max_iter {}; learning rate clamped to 0",
            cfg.max_iter
        );
        return 0.0;
    }
    if k < cfg.slow_start_steps {
        return cfg.slow_start_lr;
    }
    cfg.lr_initial * (1.0 - k as f64 / cfg.max_iter as f64).powf(cfg.power)
}

/// Scale factors 0.5, 0.75, ..., 2.0.
pub const SCALES: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

pub const CROP_SIZE: usize = 769;

/// Padding value for images; the standardized value of a mid-grey pixel.
pub const IMAGE_PAD: f32 = 0.0;

fn check_pair(image: &Tensor, labels: &LabelMap) -> Result<Shape> {
    let s = image.shape();
    if s.n() != 1 {
        return Err(TensorError::DimMismatch {
            dim: "batch",
            expected: 1,
            actual: s.n(),
        });
    }
    if s.h() != labels.height() {
        return Err(TensorError::DimMismatch {
            dim: "label height",
            expected: s.h(),
            actual: labels.height(),
        });
    }
    if s.w() != labels.width() {
        return Err(TensorError::DimMismatch {
            dim: "label width",
            expected: s.w(),
            actual: labels.width(),
        });
    }
    Ok(s)
}

pub fn draw_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    SCALES[rng.random_range(0..SCALES.len())]
}

/// Nearest-neighbour resize using the same corner-aligned sampling grid as
/// the image resize, so both stay registered.
pub fn resize_labels_nearest(labels: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    let ys: Vec<usize> = (0..out_h)
        .map(|y| source_coord(y, labels.height(), out_h, true).round() as usize)
        .collect();
    let xs: Vec<usize> = (0..out_w)
        .map(|x| source_coord(x, labels.width(), out_w, true).round() as usize)
        .collect();
    let mut out = LabelMap::filled(out_h, out_w, IGNORE_LABEL);
    for (oy, &sy) in ys.iter().enumerate() {
        for (ox, &sx) in xs.iter().enumerate() {
            out.set(oy, ox, labels.at(sy, sx));
        }
    }
    out
}

/// Resizes both by `scale`: image bilinear, labels nearest.
pub fn scale_pair(image: &Tensor, labels: &LabelMap, scale: f64) -> Result<(Tensor, LabelMap)> {
    let s = check_pair(image, labels)?;
    let h = ((s.h() as f64 * scale).round() as usize).max(1);
    let w = ((s.w() as f64 * scale).round() as usize).max(1);
    if (h, w) == (s.h(), s.w()) {
        return Ok((image.clone(), labels.clone()));
    }
    Ok((
        bilinear_resize(image, h, w, true)?,
        resize_labels_nearest(labels, h, w),
    ))
}

pub fn random_scale<R: Rng + ?Sized>(
    image: &Tensor,
    labels: &LabelMap,
    rng: &mut R,
) -> Result<(Tensor, LabelMap)> {
    let scale = draw_scale(rng);
    scale_pair(image, labels, scale)
}

/// Pads bottom and right to at least `size x size`: image with
/// [`IMAGE_PAD`], labels with the ignore id.
pub fn pad_to(image: &Tensor, labels: &LabelMap, size: usize) -> Result<(Tensor, LabelMap)> {
    let s = check_pair(image, labels)?;
    let (h, w) = (s.h().max(size), s.w().max(size));
    if (h, w) == (s.h(), s.w()) {
        return Ok((image.clone(), labels.clone()));
    }
    let img = Tensor::from_fn(Shape::new(1, s.c(), h, w)?, |_, c, y, x| {
        if y < s.h() && x < s.w() {
            image.at(0, c, y, x)
        } else {
            IMAGE_PAD
        }
    });
    let mut lab = LabelMap::filled(h, w, IGNORE_LABEL);
    for y in 0..s.h() {
        for x in 0..s.w() {
            lab.set(y, x, labels.at(y, x));
        }
    }
    Ok((img, lab))
}

pub fn crop_at(
    image: &Tensor,
    labels: &LabelMap,
    top: usize,
    left: usize,
    size: usize,
) -> Result<(Tensor, LabelMap)> {
    let s = check_pair(image, labels)?;
    if top + size > s.h() || left + size > s.w() {
        return Err(TensorError::InvalidParam(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {}x{}",
            s.h(),
            s.w()
        )));
    }
    let img = Tensor::from_fn(Shape::new(1, s.c(), size, size)?, |_, c, y, x| {
        image.at(0, c, top + y, left + x)
    });
    let data = (0..size)
        .flat_map(|y| (0..size).map(move |x| (y, x)))
        .map(|(y, x)| labels.at(top + y, left + x))
        .collect();
    let lab = LabelMap::new(size, size, data).expect("size checked");
    Ok((img, lab))
}

/// Draws `(top, left)` uniformly over valid offsets for an `h x w` input.
pub fn draw_crop_offsets<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    size: usize,
    rng: &mut R,
) -> (usize, usize) {
    let top = rng.random_range(0..=h.saturating_sub(size));
    let left = rng.random_range(0..=w.saturating_sub(size));
    (top, left)
}

/// Pads if needed, then takes a uniformly placed `size x size` crop.
pub fn random_crop<R: Rng + ?Sized>(
    image: &Tensor,
    labels: &LabelMap,
    size: usize,
    rng: &mut R,
) -> Result<(Tensor, LabelMap)> {
    if size == 0 {
        return Err(TensorError::ZeroDim { dim: "crop size" });
    }
    let (img, lab) = pad_to(image, labels, size)?;
    let s = img.shape();
    let (top, left) = draw_crop_offsets(s.h(), s.w(), size, rng);
    crop_at(&img, &lab, top, left, size)
}

pub fn flip_horizontal(image: &Tensor, labels: &LabelMap) -> Result<(Tensor, LabelMap)> {
    let s = check_pair(image, labels)?;
    let w = s.w();
    let img = Tensor::from_fn(s, |b, c, y, x| image.at(b, c, y, w - 1 - x));
    let mut lab = labels.clone();
    for y in 0..s.h() {
        for x in 0..w {
            lab.set(y, x, labels.at(y, w - 1 - x));
        }
    }
    Ok((img, lab))
}

/// Flips both left-right with probability 0.5, or always when `force`.
pub fn random_flip<R: Rng + ?Sized>(
    image: &Tensor,
    labels: &LabelMap,
    force: bool,
    rng: &mut R,
) -> Result<(Tensor, LabelMap, bool)> {
    let flip = force || rng.random_bool(0.5);
    if flip {
        let (i, l) = flip_horizontal(image, labels)?;
        Ok((i, l, true))
    } else {
        check_pair(image, labels)?;
        Ok((image.clone(), labels.clone(), false))
    }
}

/// Scale, crop, flip in that order.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    labels: &LabelMap,
    crop: usize,
    rng: &mut R,
) -> Result<(Tensor, LabelMap)> {
    let (i, l) = random_scale(image, labels, rng)?;
    let (i, l) = random_crop(&i, &l, crop, rng)?;
    let (i, l, _) = random_flip(&i, &l, false, rng)?;
    Ok((i, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(h: usize, w: usize) -> (Tensor, LabelMap) {
        let img = Tensor::from_fn(Shape([1, 3, h, w]), |_, c, y, x| {
            (c * 1000 + y * w + x) as f32
        });
        let lab = LabelMap::new(h, w, (0..h * w).map(|i| (i % 19) as u8).collect()).unwrap();
        (img, lab)
    }

    #[test]
    fn poly_endpoints_and_midpoint() {
        let cfg = ScheduleConfig::pretrain();
        assert_eq!(poly_lr(0, &cfg), 0.001);
        assert_eq!(poly_lr(cfg.max_iter, &cfg), 0.0);
        assert_eq!(poly_lr(cfg.max_iter + 5, &cfg), 0.0);
        let mid = poly_lr(cfg.max_iter / 2, &cfg);
        assert!((mid - 5.359e-4).abs() < 1e-7, "{mid}");
    }

    #[test]
    fn slow_start_is_flat_then_poly() {
        let cfg = ScheduleConfig::fine_tune();
        assert_eq!(poly_lr(0, &cfg), 1e-5);
        assert_eq!(poly_lr(185, &cfg), 1e-5);
        let at = poly_lr(186, &cfg);
        assert!((at - 1e-4 * (1.0 - 186.0 / 120_000.0f64).powf(0.9)).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for k in (186..=cfg.max_iter).step_by(997) {
            let lr = poly_lr(k, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn bad_schedules_rejected() {
        let mut cfg = ScheduleConfig::pretrain();
        assert!(cfg.validate().is_ok());
        cfg.power = 0.0;
        assert!(cfg.validate().is_err());
        cfg = ScheduleConfig {
            max_iter: 0,
            ..ScheduleConfig::pretrain()
        };
        assert!(cfg.validate().is_err());
        cfg = ScheduleConfig {
            lr_initial: f64::NAN,
            ..ScheduleConfig::pretrain()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unit_scale_is_identity() {
        let (img, lab) = pair(5, 7);
        let (i, l) = scale_pair(&img, &lab, 1.0).unwrap();
        assert_eq!(i, img);
        assert_eq!(l, lab);
        let (i, l) = scale_pair(&img, &lab, 2.0).unwrap();
        assert_eq!(i.shape().0, [1, 3, 10, 14]);
        assert_eq!((l.height(), l.width()), (10, 14));
    }

    #[test]
    fn exact_size_crop_is_identity() {
        let (img, lab) = pair(9, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (i, l) = random_crop(&img, &lab, 9, &mut rng).unwrap();
        assert_eq!(i, img);
        assert_eq!(l, lab);
    }

    #[test]
    fn small_input_is_padded() {
        let (img, lab) = pair(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (i, l) = random_crop(&img, &lab, 6, &mut rng).unwrap();
        assert_eq!(i.at(0, 1, 5, 5), IMAGE_PAD);
        assert_eq!(l.at(5, 5), IGNORE_LABEL);
        assert_eq!(l.at(2, 3), lab.at(2, 3));
        assert_eq!(i.at(0, 2, 2, 3), img.at(0, 2, 2, 3));
    }

    #[test]
    fn double_flip_is_identity() {
        let (img, lab) = pair(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (i, l, f) = random_flip(&img, &lab, true, &mut rng).unwrap();
        assert!(f);
        assert_ne!(l, lab);
        let (i, l, _) = random_flip(&i, &l, true, &mut rng).unwrap();
        assert_eq!(i, img);
        assert_eq!(l, lab);
    }

    #[test]
    fn mismatched_pair_rejected() {
        let (img, _) = pair(4, 5);
        assert!(flip_horizontal(&img, &LabelMap::filled(4, 4, 0)).is_err());
    }
}
