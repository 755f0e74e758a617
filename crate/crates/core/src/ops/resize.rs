use crate::tensor::{Result, Shape, Tensor, TensorError};

/// Source coordinate sampled by output index `dst`.
///
/// With `align_corners` the corner pixels of input and output coincide;
/// otherwise pixel centres are aligned (half-pixel convention).
#[inline]
pub fn source_coord(dst: usize, in_len: usize, out_len: usize, align_corners: bool) -> f32 {
    if align_corners {
        if out_len == 1 {
            0.0
        } else {
            dst as f32 * (in_len - 1) as f32 / (out_len - 1) as f32
        }
    } else {
        let s = (dst as f32 + 0.5) * in_len as f32 / out_len as f32 - 0.5;
        s.clamp(0.0, (in_len - 1) as f32)
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(in_len: usize, out_len: usize, align_corners: bool) -> Vec<Tap> {
    (0..out_len)
        .map(|d| {
            let s = source_coord(d, in_len, out_len, align_corners);
            let lo = (s.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f32,
            }
        })
        .collect()
}

/// `a + (b - a) * t`, clamped to the closed interval spanned by `a` and `b`
/// so rounding can never leave the input range.
#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if a == b {
        return a;
    }
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

pub fn bilinear_resize(
    input: &Tensor,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidParam(
            "resize target must be at least 1x1".into(),
        ));
    }
    let s = input.shape();
    let out_shape = Shape::new(s.n(), s.c(), out_h, out_w)?;
    let ty = taps(s.h(), out_h, align_corners);
    let tx = taps(s.w(), out_w, align_corners);
    let mut out = Vec::with_capacity(out_shape.numel());
    for b in 0..s.n() {
        for c in 0..s.c() {
            let p = input.plane(b, c);
            for y in &ty {
                let r0 = &p[y.lo * s.w()..(y.lo + 1) * s.w()];
                let r1 = &p[y.hi * s.w()..(y.hi + 1) * s.w()];
                for x in &tx {
                    let top = lerp(r0[x.lo], r0[x.hi], x.frac);
                    let bottom = lerp(r1[x.lo], r1[x.hi], x.frac);
                    out.push(lerp(top, bottom, y.frac));
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_upsampling_size() {
        let x = Tensor::zeros(Shape::new(1, 19, 49, 49).unwrap());
        let y = bilinear_resize(&x, 769, 769, true).unwrap();
        assert_eq!(y.shape().0, [1, 19, 769, 769]);
    }

    #[test]
    fn align_corners_grid_midpoint() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 3, 3, true).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 1.5);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(0, 0, 2, 2), 3.0);
        assert_eq!(y.at(0, 0, 0, 1), 0.5);
    }

    #[test]
    fn constant_plane_is_preserved() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5).unwrap(), 0.1);
        for align in [true, false] {
            let y = bilinear_resize(&x, 17, 4, align).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.1));
        }
    }

    #[test]
    fn single_pixel_broadcasts() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![4.0, -1.0]).unwrap();
        let y = bilinear_resize(&x, 3, 2, true).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 4.0));
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2).unwrap());
        assert!(bilinear_resize(&x, 0, 2, true).is_err());
    }
}
