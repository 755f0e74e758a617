use crate::ops::conv::same_pad;
use crate::tensor::{Result, Shape, Tensor, TensorError};

/// SAME-padded max pooling. Padding cells behave as `-inf`, i.e. they never win.
pub fn maxpool(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    if kernel == 0 || stride == 0 {
        return Err(TensorError::InvalidParam(
            "pool kernel and stride must be >= 1".into(),
        ));
    }
    let s = input.shape();
    let ph = same_pad(s.h(), kernel, stride, 1);
    let pw = same_pad(s.w(), kernel, stride, 1);
    let out_shape = Shape::new(s.n(), s.c(), ph.out, pw.out)?;
    let mut out = Vec::with_capacity(out_shape.numel());
    for b in 0..s.n() {
        for c in 0..s.c() {
            let plane = input.plane(b, c);
            for oy in 0..ph.out {
                let y0 = (oy * stride) as isize - ph.before as isize;
                let ys = y0.max(0) as usize..((y0 + kernel as isize).min(s.h() as isize)) as usize;
                for ox in 0..pw.out {
                    let x0 = (ox * stride) as isize - pw.before as isize;
                    let xs =
                        x0.max(0) as usize..((x0 + kernel as isize).min(s.w() as isize)) as usize;
                    let mut m = f32::NEG_INFINITY;
                    for y in ys.clone() {
                        for &v in &plane[y * s.w() + xs.start..y * s.w() + xs.end] {
                            if v > m {
                                m = v;
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Spatial mean per channel; output is `(n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let count = s.plane() as f64;
    let out_shape = s.with_channels(s.c());
    let out_shape = Shape([out_shape.n(), out_shape.c(), 1, 1]);
    let data = input
        .data()
        .chunks(s.plane())
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / count) as f32)
        .collect();
    Tensor::new(out_shape, data).expect("shape derived from input")
}
