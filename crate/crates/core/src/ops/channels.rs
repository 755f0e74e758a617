//! Channel split, shuffle and concatenation. All are pure data movement.

use crate::tensor::{Result, Shape, Tensor, TensorError};

/// Copies channels `[from, from + count)` of every batch element.
pub fn slice_channels(input: &Tensor, from: usize, count: usize) -> Result<Tensor> {
    let s = input.shape();
    if count == 0 || from + count > s.c() {
        return Err(TensorError::InvalidParam(format!(
            "channel slice [{from}, {}) outside 0..{}",
            from + count,
            s.c()
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n() * count * plane);
    for b in 0..s.n() {
        let start = (b * s.c() + from) * plane;
        data.extend_from_slice(&input.data()[start..start + count * plane]);
    }
    Tensor::new(s.with_channels(count), data)
}

/// First and second half of the channels.
pub fn channel_split(input: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = input.shape().c();
    if c % 2 != 0 {
        return Err(TensorError::InvalidParam(format!(
            "channel_split needs an even channel count, got {c}"
        )));
    }
    Ok((
        slice_channels(input, 0, c / 2)?,
        slice_channels(input, c / 2, c / 2)?,
    ))
}

/// Source channel read by output channel `i`.
#[inline]
pub fn shuffle_source(i: usize, channels: usize, groups: usize) -> usize {
    (i % groups) * (channels / groups) + i / groups
}

pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let s = input.shape();
    if groups == 0 || s.c() % groups != 0 {
        return Err(TensorError::InvalidParam(format!(
            "channel count {} not divisible by shuffle groups {groups}",
            s.c()
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for b in 0..s.n() {
        for i in 0..s.c() {
            data.extend_from_slice(input.plane(b, shuffle_source(i, s.c(), groups)));
        }
    }
    debug_assert_eq!(data.len(), s.n() * s.c() * plane);
    Tensor::new(s, data)
}

pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| TensorError::InvalidParam("concat of zero tensors".into()))?
        .shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        for (dim, e, a) in [
            ("batch", first.n(), s.n()),
            ("height", first.h(), s.h()),
            ("width", first.w(), s.w()),
        ] {
            if e != a {
                return Err(TensorError::DimMismatch {
                    dim,
                    expected: e,
                    actual: a,
                });
            }
        }
        channels += s.c();
    }
    let out_shape = Shape::new(first.n(), channels, first.h(), first.w())?;
    let mut data = Vec::with_capacity(out_shape.numel());
    let plane = first.plane();
    for b in 0..first.n() {
        for t in inputs {
            let c = t.shape().c();
            let start = b * c * plane;
            data.extend_from_slice(&t.data()[start..start + c * plane]);
        }
    }
    Tensor::new(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(c: usize) -> Tensor {
        Tensor::from_fn(Shape::new(2, c, 2, 3).unwrap(), |b, ch, y, x| {
            (b * 1000 + ch * 10) as f32 + (y * 3 + x) as f32 * 0.1
        })
    }

    fn channel_ids(t: &Tensor) -> Vec<usize> {
        (0..t.shape().c())
            .map(|c| (t.at(0, c, 0, 0) / 10.0) as usize)
            .collect()
    }

    #[test]
    fn split_halves() {
        let (a, b) = channel_split(&labelled(4)).unwrap();
        assert_eq!(channel_ids(&a), vec![0, 1]);
        assert_eq!(channel_ids(&b), vec![2, 3]);
        assert_eq!(b.at(1, 0, 1, 2), labelled(4).at(1, 2, 1, 2));
    }

    #[test]
    fn split_rejects_odd() {
        assert!(channel_split(&labelled(5)).is_err());
    }

    #[test]
    fn split_stage_two_width() {
        let x = Tensor::zeros(Shape::new(1, 116, 97, 97).unwrap());
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(a.shape().0, [1, 58, 97, 97]);
        assert_eq!(b.shape().0, [1, 58, 97, 97]);
    }

    #[test]
    fn split_concat_round_trip() {
        let x = labelled(6);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(concat_channels(&[&a, &b]).unwrap(), x);
    }

    #[test]
    fn shuffle_definition() {
        let y = channel_shuffle(&labelled(4), 2).unwrap();
        assert_eq!(channel_ids(&y), vec![0, 2, 1, 3]);
        assert_eq!(channel_shuffle(&labelled(6), 1).unwrap(), labelled(6));
        assert!(channel_shuffle(&labelled(6), 4).is_err());
    }

    #[test]
    fn concat_order_and_single() {
        let x = labelled(2);
        let y = labelled(3);
        assert_eq!(concat_channels(&[&x]).unwrap(), x);
        let xy = concat_channels(&[&x, &y]).unwrap();
        let yx = concat_channels(&[&y, &x]).unwrap();
        assert_eq!(channel_ids(&xy), vec![0, 1, 0, 1, 2]);
        assert_eq!(channel_ids(&yx), vec![0, 1, 2, 0, 1]);
        // second batch element keeps its own data
        assert_eq!(xy.at(1, 3, 0, 0), 1010.0);
    }

    #[test]
    fn concat_stage_two_width() {
        let a = Tensor::zeros(Shape::new(1, 58, 5, 5).unwrap());
        assert_eq!(concat_channels(&[&a, &a]).unwrap().shape().c(), 116);
    }

    #[test]
    fn concat_spatial_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 2, 5, 5).unwrap());
        let b = Tensor::zeros(Shape::new(1, 2, 5, 4).unwrap());
        assert_eq!(
            concat_channels(&[&a, &b]).unwrap_err(),
            TensorError::DimMismatch {
                dim: "width",
                expected: 5,
                actual: 4
            }
        );
    }
}
