//! Direct nested-loop reference implementations of every kernel.
//!
//! These are deliberately slow and share no code with the fast kernels
//! beyond the parameter types; tests compare the two.

use crate::labels::LabelMap;
use crate::ops::conv::ConvParams;
use crate::tensor::{Result, Shape, Tensor, TensorError};

fn same_geometry(input: usize, k: usize, stride: usize, rate: usize) -> (usize, isize) {
    let out = (input + stride - 1) / stride;
    let needed = (out as isize - 1) * stride as isize + ((k as isize - 1) * rate as isize + 1);
    let total = (needed - input as isize).max(0);
    (out, total / 2)
}

pub fn naive_conv_oracle(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    let [c_out, cin_g, kh, kw] = p.kernel.shape().0;
    if cin_g * p.groups != s.c() {
        return Err(TensorError::DimMismatch {
            dim: "input channels",
            expected: cin_g * p.groups,
            actual: s.c(),
        });
    }
    let (oh, pad_t) = same_geometry(s.h(), kh, p.stride.0, p.rate.0);
    let (ow, pad_l) = same_geometry(s.w(), kw, p.stride.1, p.rate.1);
    let cout_g = c_out / p.groups;
    let out_shape = Shape::new(s.n(), c_out, oh, ow)?;
    let mut out = Tensor::zeros(out_shape);
    for b in 0..s.n() {
        for co in 0..c_out {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * p.stride.0 + ky * p.rate.0) as isize - pad_t;
                            let ix = (ox * p.stride.1 + kx * p.rate.1) as isize - pad_l;
                            if iy < 0 || ix < 0 || iy >= s.h() as isize || ix >= s.w() as isize {
                                continue;
                            }
                            for ci in 0..cin_g {
                                acc += p.kernel.at(co, ci, ky, kx)
                                    * input.at(b, g * cin_g + ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(bias) = &p.bias {
                        acc += bias[co];
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

pub fn naive_maxpool(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let s = input.shape();
    let (oh, pad_t) = same_geometry(s.h(), k, stride, 1);
    let (ow, pad_l) = same_geometry(s.w(), k, stride, 1);
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), oh, ow)?);
    for b in 0..s.n() {
        for c in 0..s.c() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = (oy * stride + dy) as isize - pad_t;
                            let ix = (ox * stride + dx) as isize - pad_l;
                            if iy >= 0 && ix >= 0 && iy < s.h() as isize && ix < s.w() as isize {
                                m = m.max(input.at(b, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.set(b, c, oy, ox, m);
                }
            }
        }
    }
    Ok(out)
}

pub fn naive_global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape([s.n(), s.c(), 1, 1]));
    for b in 0..s.n() {
        for c in 0..s.c() {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for y in 0..s.h() {
                for x in 0..s.w() {
                    sum += input.at(b, c, y, x) as f64;
                    count += 1;
                }
            }
            out.set(b, c, 0, 0, (sum / count as f64) as f32);
        }
    }
    out
}

/// Four-tap weighted-sum form of bilinear interpolation.
pub fn naive_bilinear_resize(
    input: &Tensor,
    oh: usize,
    ow: usize,
    align_corners: bool,
) -> Result<Tensor> {
    let s = input.shape();
    let src = |d: usize, n_in: usize, n_out: usize| -> f64 {
        if align_corners {
            if n_out > 1 {
                d as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
            } else {
                0.0
            }
        } else {
            ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, n_in as f64 - 1.0)
        }
    };
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), oh, ow)?);
    for b in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..oh {
                let sy = src(y, s.h(), oh);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(s.h() - 1);
                let fy = sy - y0 as f64;
                for x in 0..ow {
                    let sx = src(x, s.w(), ow);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(s.w() - 1);
                    let fx = sx - x0 as f64;
                    let v = (1.0 - fy) * (1.0 - fx) * input.at(b, c, y0, x0) as f64
                        + (1.0 - fy) * fx * input.at(b, c, y0, x1) as f64
                        + fy * (1.0 - fx) * input.at(b, c, y1, x0) as f64
                        + fy * fx * input.at(b, c, y1, x1) as f64;
                    out.set(b, c, y, x, v as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Linear scan per pixel; the first maximum wins.
pub fn naive_argmax(logits: &Tensor) -> Vec<LabelMap> {
    let s = logits.shape();
    (0..s.n())
        .map(|b| {
            let mut m = LabelMap::filled(s.h(), s.w(), 0);
            for y in 0..s.h() {
                for x in 0..s.w() {
                    let mut best = 0;
                    for c in 1..s.c() {
                        if logits.at(b, c, y, x) > logits.at(b, best, y, x) {
                            best = c;
                        }
                    }
                    m.set(y, x, best as u8);
                }
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_identity_and_zero_kernel() {
        let x = Tensor::from_fn(Shape::new(1, 3, 4, 5).unwrap(), |_, c, y, x| {
            (c * 20 + y * 5 + x) as f32
        });
        let eye = Tensor::from_fn(Shape::new(3, 3, 1, 1).unwrap(), |o, i, _, _| {
            (o == i) as u8 as f32
        });
        assert_eq!(
            naive_conv_oracle(&x, &ConvParams::simple(eye).unwrap()).unwrap(),
            x
        );

        let zero = Tensor::zeros(Shape::new(2, 3, 3, 3).unwrap());
        let p = ConvParams::new(zero, Some(vec![1.5, -2.0]), (1, 1), (1, 1), 1).unwrap();
        let y = naive_conv_oracle(&x, &p).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 1.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -2.0));
    }
}
