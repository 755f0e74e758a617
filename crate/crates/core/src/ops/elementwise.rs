use rand::Rng;

use crate::labels::LabelMap;
use crate::tensor::{Result, Tensor, TensorError};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Training-mode dropout: each element is kept with probability `keep_prob`
/// and scaled by `1 / keep_prob`, otherwise zeroed. Inference uses identity.
pub fn dropout_train<R: Rng + ?Sized>(
    input: &Tensor,
    keep_prob: f32,
    rng: &mut R,
) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(TensorError::InvalidParam(format!(
            "keep probability {keep_prob} outside (0, 1]"
        )));
    }
    let scale = 1.0 / keep_prob;
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = if rng.random::<f32>() < keep_prob {
            *v * scale
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Per-pixel index of the largest channel, one map per batch element.
/// Ties resolve to the lowest channel index.
pub fn argmax_channels(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let s = logits.shape();
    if s.c() > 255 {
        return Err(TensorError::InvalidParam(format!(
            "{} channels do not fit 8-bit labels",
            s.c()
        )));
    }
    let plane = s.plane();
    let mut maps = Vec::with_capacity(s.n());
    for b in 0..s.n() {
        let mut best = logits.plane(b, 0).to_vec();
        let mut idx = vec![0u8; plane];
        for c in 1..s.c() {
            for ((bv, iv), &v) in best.iter_mut().zip(idx.iter_mut()).zip(logits.plane(b, c)) {
                if v > *bv {
                    *bv = v;
                    *iv = c as u8;
                }
            }
        }
        maps.push(LabelMap::new(s.h(), s.w(), idx).expect("plane sized from tensor"));
    }
    Ok(maps)
}
