//! Grouped / depthwise / atrous 2-D convolution with SAME padding, plus
//! batch-norm application and folding.

use rayon::prelude::*;

use crate::tensor::{Result, Shape, Tensor, TensorError};

/// Per-axis SAME padding: output extent and the padding before the first
/// input element. The odd pixel, if any, goes after (bottom/right).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamePad {
    pub out: usize,
    pub before: usize,
}

pub fn same_pad(input: usize, kernel: usize, stride: usize, rate: usize) -> SamePad {
    let out = input.div_ceil(stride);
    let extent = (kernel - 1) * rate + 1;
    let total = ((out - 1) * stride + extent).saturating_sub(input);
    SamePad {
        out,
        before: total / 2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(c_out, c_in / groups, k_h, k_w)`
    pub kernel: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: (usize, usize),
    pub rate: (usize, usize),
    pub groups: usize,
}

impl ConvParams {
    pub fn new(
        kernel: Tensor,
        bias: Option<Vec<f32>>,
        stride: (usize, usize),
        rate: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::InvalidParam("stride must be >= 1".into()));
        }
        if rate.0 == 0 || rate.1 == 0 {
            return Err(TensorError::InvalidParam("atrous rate must be >= 1".into()));
        }
        if groups == 0 {
            return Err(TensorError::InvalidParam("groups must be >= 1".into()));
        }
        let c_out = kernel.shape().n();
        if c_out % groups != 0 {
            return Err(TensorError::InvalidParam(format!(
                "output channels {c_out} not divisible by groups {groups}"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(TensorError::DimMismatch {
                    dim: "bias length",
                    expected: c_out,
                    actual: b.len(),
                });
            }
        }
        Ok(ConvParams {
            kernel,
            bias,
            stride,
            rate,
            groups,
        })
    }

    /// Stride 1, rate 1, single group, no bias.
    pub fn simple(kernel: Tensor) -> Result<Self> {
        ConvParams::new(kernel, None, (1, 1), (1, 1), 1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n()
    }

    pub fn in_channels_per_group(&self) -> usize {
        self.kernel.shape().c()
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape().h(), self.kernel.shape().w())
    }

    pub fn is_depthwise(&self) -> bool {
        self.in_channels_per_group() == 1 && self.groups == self.out_channels()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let expected = self.in_channels_per_group() * self.groups;
        if input.c() != expected {
            return Err(TensorError::DimMismatch {
                dim: "input channels",
                expected,
                actual: input.c(),
            });
        }
        let (kh, kw) = self.kernel_size();
        let ph = same_pad(input.h(), kh, self.stride.0, self.rate.0);
        let pw = same_pad(input.w(), kw, self.stride.1, self.rate.1);
        Shape::new(input.n(), self.out_channels(), ph.out, pw.out)
    }
}

/// Geometry shared by every output plane of one convolution call.
struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    pad_h: usize,
    pad_w: usize,
    stride: (usize, usize),
    rate: (usize, usize),
}

impl Geometry {
    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let shift = (kx * self.rate.1) as isize - self.pad_w as isize;
        let s = self.stride.1 as isize;
        // smallest ox with ox*s + shift >= 0
        let lo = if shift >= 0 {
            0
        } else {
            ((-shift) + s - 1) / s
        };
        // largest ox with ox*s + shift <= in_w - 1
        let last = self.in_w as isize - 1 - shift;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = (lo as usize).min(self.out_w);
        let hi = (hi as usize).min(self.out_w);
        (lo, hi.max(lo))
    }

    /// Accumulates `weight * in_plane` shifted by tap `(ky, kx)` into `out`.
    #[inline]
    fn accumulate_tap(&self, out: &mut [f64], in_plane: &[f32], ky: usize, kx: usize, weight: f64) {
        let (lo, hi) = self.valid_cols(kx);
        if lo >= hi {
            return;
        }
        let col_shift = (kx * self.rate.1) as isize - self.pad_w as isize;
        for oy in 0..self.out_h {
            let iy = (oy * self.stride.0 + ky * self.rate.0) as isize - self.pad_h as isize;
            if iy < 0 || iy >= self.in_h as isize {
                continue;
            }
            let in_row = &in_plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
            let out_row = &mut out[oy * self.out_w..(oy + 1) * self.out_w];
            if self.stride.1 == 1 {
                let start = (lo as isize + col_shift) as usize;
                let src = &in_row[start..start + (hi - lo)];
                for (o, &v) in out_row[lo..hi].iter_mut().zip(src) {
                    *o += weight * v as f64;
                }
            } else {
                for (ox, o) in out_row.iter_mut().enumerate().take(hi).skip(lo) {
                    let ix = (ox * self.stride.1) as isize + col_shift;
                    *o += weight * in_row[ix as usize] as f64;
                }
            }
        }
    }
}

/// SAME-padded grouped convolution with atrous rates.
///
/// Every output element accumulates in f64 in the fixed order
/// `(ky, kx, c_in)` starting from zero, then adds the bias and rounds
/// once. Output planes are computed in parallel, which leaves each
/// element's summation order untouched.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv_with_epilogue(input, p, None)
}

/// Convolution followed by batch normalization, with the normalization
/// applied to the f64 accumulator before the single rounding to f32.
/// Matches `batch_norm(conv2d(x))` up to that one skipped rounding.
pub fn conv2d_bn(input: &Tensor, p: &ConvParams, bn: &BatchNormParams) -> Result<Tensor> {
    bn.validate()?;
    if bn.channels() != p.out_channels() {
        return Err(TensorError::DimMismatch {
            dim: "batch-norm channels",
            expected: p.out_channels(),
            actual: bn.channels(),
        });
    }
    let (scale, shift) = bn.affine();
    conv_with_epilogue(input, p, Some((&scale, &shift)))
}

type Epilogue<'a> = Option<(&'a [f64], &'a [f64])>;

#[inline]
fn finish(acc: f64, bias: f64, epi: Epilogue, co: usize) -> f32 {
    match epi {
        None => (acc + bias) as f32,
        Some((scale, shift)) => ((acc + bias) * scale[co] + shift[co]) as f32,
    }
}

fn conv_with_epilogue(input: &Tensor, p: &ConvParams, epi: Epilogue) -> Result<Tensor> {
    let in_shape = input.shape();
    let out_shape = p.output_shape(in_shape)?;
    if p.kernel_size() == (1, 1) && p.stride == (1, 1) && p.groups == 1 {
        return Ok(pointwise(input, p, out_shape, epi));
    }
    Ok(general(input, p, out_shape, epi))
}

fn general(input: &Tensor, p: &ConvParams, out_shape: Shape, epi: Epilogue) -> Tensor {
    let in_shape = input.shape();
    let (kh, kw) = p.kernel_size();
    let geo = Geometry {
        in_h: in_shape.h(),
        in_w: in_shape.w(),
        out_h: out_shape.h(),
        out_w: out_shape.w(),
        pad_h: same_pad(in_shape.h(), kh, p.stride.0, p.rate.0).before,
        pad_w: same_pad(in_shape.w(), kw, p.stride.1, p.rate.1).before,
        stride: p.stride,
        rate: p.rate,
    };
    let c_out = out_shape.c();
    let cin_g = p.in_channels_per_group();
    let cout_g = c_out / p.groups;
    let plane = out_shape.plane();
    let kdata = p.kernel.data();

    let mut out = vec![0.0f32; out_shape.numel()];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, out_plane)| {
            let b = idx / c_out;
            let co = idx % c_out;
            let g = co / cout_g;
            let kbase = co * cin_g * kh * kw;
            let mut acc = vec![0.0f64; plane];
            for ky in 0..kh {
                for kx in 0..kw {
                    for ci in 0..cin_g {
                        let wgt = kdata[kbase + (ci * kh + ky) * kw + kx];
                        if wgt == 0.0 {
                            continue;
                        }
                        let in_plane = input.plane(b, g * cin_g + ci);
                        geo.accumulate_tap(&mut acc, in_plane, ky, kx, wgt as f64);
                    }
                }
            }
            let bv = p.bias.as_ref().map_or(0.0, |b| b[co] as f64);
            for (o, &a) in out_plane.iter_mut().zip(&acc) {
                *o = finish(a, bv, epi, co);
            }
        });
    Tensor::new(out_shape, out).expect("length matches shape")
}

const CO_BLOCK: usize = 8;
const PX_BLOCK: usize = 128;

/// Stride-1 1x1 convolution, blocked over output channels and pixels so
/// each input row is reused from cache. Per element the summation order is
/// the same as in the general path, so results are bit-identical.
fn pointwise(input: &Tensor, p: &ConvParams, out_shape: Shape, epi: Epilogue) -> Tensor {
    let c_in = input.shape().c();
    let c_out = out_shape.c();
    let plane = out_shape.plane();
    let kdata = p.kernel.data();
    let mut out = vec![0.0f32; out_shape.numel()];
    for (b, out_b) in out.chunks_mut(c_out * plane).enumerate() {
        out_b
            .par_chunks_mut(CO_BLOCK * plane)
            .enumerate()
            .for_each(|(blk, out_blk)| {
                let co0 = blk * CO_BLOCK;
                let nco = out_blk.len() / plane;
                let mut acc = [[0.0f64; PX_BLOCK]; CO_BLOCK];
                for start in (0..plane).step_by(PX_BLOCK) {
                    let len = PX_BLOCK.min(plane - start);
                    for row in acc.iter_mut().take(nco) {
                        row[..len].fill(0.0);
                    }
                    for ci in 0..c_in {
                        let x = &input.plane(b, ci)[start..start + len];
                        for (j, row) in acc.iter_mut().enumerate().take(nco) {
                            let w = kdata[(co0 + j) * c_in + ci];
                            if w == 0.0 {
                                continue;
                            }
                            let w = w as f64;
                            for (a, &v) in row[..len].iter_mut().zip(x) {
                                *a += w * v as f64;
                            }
                        }
                    }
                    for (j, row) in acc.iter().enumerate().take(nco) {
                        let bv = p.bias.as_ref().map_or(0.0, |bias| bias[co0 + j] as f64);
                        let dst = &mut out_blk[j * plane + start..j * plane + start + len];
                        for (o, &a) in dst.iter_mut().zip(&row[..len]) {
                            *o = finish(a, bv, epi, co0 + j);
                        }
                    }
                }
            });
    }
    Tensor::new(out_shape, out).expect("length matches shape")
}

/// Inference-time batch normalization statistics for `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub moving_mean: Vec<f32>,
    pub moving_variance: Vec<f32>,
    pub epsilon: f32,
}

pub const DEFAULT_BN_EPSILON: f32 = 1e-3;

impl BatchNormParams {
    /// gamma=1, beta=0, mean=0, var=1.
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            moving_mean: vec![0.0; channels],
            moving_variance: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (dim, len) in [
            ("beta length", self.beta.len()),
            ("moving_mean length", self.moving_mean.len()),
            ("moving_variance length", self.moving_variance.len()),
        ] {
            if len != c {
                return Err(TensorError::DimMismatch {
                    dim,
                    expected: c,
                    actual: len,
                });
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(TensorError::InvalidParam(
                "batch-norm epsilon must be >= 0".into(),
            ));
        }
        for (ch, &v) in self.moving_variance.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(TensorError::InvalidParam(format!(
                    "negative moving variance {v} in channel {ch}"
                )));
            }
            if v + self.epsilon <= 0.0 {
                return Err(TensorError::InvalidParam(format!(
                    "variance + epsilon is zero in channel {ch}"
                )));
            }
        }
        Ok(())
    }

    /// `(scale, shift)` such that `bn(x) = x * scale + shift`.
    /// Per-channel `(scale, shift)` with `bn(y) = y * scale + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.moving_variance)
            .map(|(&g, &v)| g as f64 / (v as f64 + self.epsilon as f64).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.moving_mean)
            .zip(&scale)
            .map(|((&b, &m), s)| b as f64 - m as f64 * s)
            .collect();
        (scale, shift)
    }
}

pub fn batch_norm(input: &Tensor, bn: &BatchNormParams) -> Result<Tensor> {
    bn.validate()?;
    let shape = input.shape();
    if bn.channels() != shape.c() {
        return Err(TensorError::DimMismatch {
            dim: "batch-norm channels",
            expected: shape.c(),
            actual: bn.channels(),
        });
    }
    let (scale, shift) = bn.affine();
    let mut out = input.clone();
    let plane = shape.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % shape.c();
        for v in chunk {
            *v = (*v as f64 * scale[c] + shift[c]) as f32;
        }
    }
    Ok(out)
}

/// Absorbs `bn` into the convolution: kernel rows scaled by
/// `gamma / sqrt(var + eps)`, bias becomes `(bias - mean) * scale + beta`.
pub fn batch_norm_fold(p: &ConvParams, bn: &BatchNormParams) -> Result<ConvParams> {
    bn.validate()?;
    let c_out = p.out_channels();
    if bn.channels() != c_out {
        return Err(TensorError::DimMismatch {
            dim: "batch-norm channels",
            expected: c_out,
            actual: bn.channels(),
        });
    }
    let (scale, _) = bn.affine();
    let mut kernel = p.kernel.clone();
    let per_out = kernel.shape().numel() / c_out;
    for (co, row) in kernel.data_mut().chunks_mut(per_out).enumerate() {
        row.iter_mut()
            .for_each(|w| *w = (*w as f64 * scale[co]) as f32);
    }
    let bias = (0..c_out)
        .map(|co| {
            let b = p.bias.as_ref().map_or(0.0, |b| b[co] as f64);
            ((b - bn.moving_mean[co] as f64) * scale[co] + bn.beta[co] as f64) as f32
        })
        .collect();
    ConvParams::new(kernel, Some(bias), p.stride, p.rate, p.groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::reference::naive_conv_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], amp: f32) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-amp..amp)).collect();
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn same_padding_matches_table_sizes() {
        assert_eq!(
            same_pad(769, 3, 2, 1),
            SamePad {
                out: 385,
                before: 1
            }
        );
        assert_eq!(same_pad(385, 3, 2, 1).out, 193);
        assert_eq!(same_pad(4, 3, 2, 1), SamePad { out: 2, before: 0 });
        assert_eq!(same_pad(9, 3, 1, 2), SamePad { out: 9, before: 2 });
        assert_eq!(same_pad(5, 1, 1, 1), SamePad { out: 5, before: 0 });
    }

    #[test]
    fn entry_conv_output_shape() {
        let k = Tensor::zeros(Shape::new(24, 3, 3, 3).unwrap());
        let p = ConvParams::new(k, None, (2, 2), (1, 1), 1).unwrap();
        let out = p.output_shape(Shape::new(1, 3, 769, 769).unwrap()).unwrap();
        assert_eq!(out.0, [1, 24, 385, 385]);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, [2, 5, 6, 7], 3.0);
        let k = Tensor::from_fn(Shape::new(5, 5, 1, 1).unwrap(), |o, i, _, _| {
            if o == i {
                1.0
            } else {
                0.0
            }
        });
        let y = conv2d(&x, &ConvParams::simple(k).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(Shape::new(1, 4, 3, 3).unwrap());
        let k = Tensor::zeros(Shape::new(2, 3, 1, 1).unwrap());
        let err = conv2d(&x, &ConvParams::simple(k).unwrap()).unwrap_err();
        assert_eq!(
            err,
            TensorError::DimMismatch {
                dim: "input channels",
                expected: 3,
                actual: 4
            }
        );
    }

    #[test]
    fn rejects_bad_params() {
        let k = Tensor::zeros(Shape::new(3, 1, 3, 3).unwrap());
        assert!(ConvParams::new(k.clone(), None, (0, 1), (1, 1), 1).is_err());
        assert!(ConvParams::new(k.clone(), None, (1, 1), (1, 0), 1).is_err());
        assert!(ConvParams::new(k.clone(), None, (1, 1), (1, 1), 2).is_err());
        assert!(ConvParams::new(k, Some(vec![0.0; 2]), (1, 1), (1, 1), 1).is_err());
    }

    #[test]
    fn depthwise_atrous_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&mut rng, [1, 4, 9, 9], 1.0);
        let k = random_tensor(&mut rng, [4, 1, 3, 3], 1.0);
        let p = ConvParams::new(k, None, (1, 1), (2, 2), 4).unwrap();
        assert!(p.is_depthwise());
        let fast = conv2d(&x, &p).unwrap();
        let slow = naive_conv_oracle(&x, &p).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-4);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor::full(Shape::new(1, 2, 4, 4).unwrap(), 3.0);
        let k = Tensor::zeros(Shape::new(3, 2, 3, 3).unwrap());
        let p = ConvParams::new(k, Some(vec![0.5, -1.0, 2.0]), (2, 2), (1, 1), 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape().0, [1, 3, 2, 2]);
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn identity_bn_fold_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_tensor(&mut rng, [4, 3, 3, 3], 1.0);
        let p = ConvParams::simple(k).unwrap();
        let folded = batch_norm_fold(&p, &BatchNormParams::identity(4, 0.0)).unwrap();
        assert!(folded.kernel.max_abs_diff(&p.kernel) <= 1e-7);
        assert!(folded.bias.unwrap().iter().all(|b| b.abs() <= 1e-7));
    }

    #[test]
    fn bn_fold_pure_scaling() {
        let k = Tensor::full(Shape::new(2, 2, 3, 3).unwrap(), 1.0);
        let p = ConvParams::simple(k).unwrap();
        let mut bn = BatchNormParams::identity(2, 0.0);
        bn.gamma = vec![2.0; 2];
        let folded = batch_norm_fold(&p, &bn).unwrap();
        assert!(folded.kernel.data().iter().all(|&w| w == 2.0));
    }

    #[test]
    fn bn_fold_rejects_negative_variance() {
        let p = ConvParams::simple(Tensor::zeros(Shape::new(2, 1, 1, 1).unwrap())).unwrap();
        let mut bn = BatchNormParams::identity(2, 1e-3);
        bn.moving_variance[1] = -0.5;
        assert!(matches!(
            batch_norm_fold(&p, &bn),
            Err(TensorError::InvalidParam(_))
        ));
    }

    #[test]
    fn folded_conv_matches_unfused_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = random_tensor(&mut rng, [6, 4, 3, 3], 0.5);
        let p = ConvParams::new(
            k,
            Some(vec![0.1, -0.2, 0.3, 0.0, 0.05, -0.1]),
            (1, 1),
            (2, 1),
            1,
        )
        .unwrap();
        let bn = BatchNormParams {
            gamma: (0..6).map(|_| rng.random_range(0.5..1.5)).collect(),
            beta: (0..6).map(|_| rng.random_range(-0.5..0.5)).collect(),
            moving_mean: (0..6).map(|_| rng.random_range(-0.5..0.5)).collect(),
            moving_variance: (0..6).map(|_| rng.random_range(0.5..1.5)).collect(),
            epsilon: DEFAULT_BN_EPSILON,
        };
        let folded = batch_norm_fold(&p, &bn).unwrap();
        let mut worst = 0.0f32;
        for _ in 0..50 {
            let x = random_tensor(&mut rng, [1, 4, 7, 7], 10.0);
            let unfused = batch_norm(&conv2d(&x, &p).unwrap(), &bn).unwrap();
            let fused = conv2d(&x, &folded).unwrap();
            worst = worst.max(unfused.max_abs_diff(&fused));
        }
        assert!(worst <= 1e-5, "max abs diff {worst}");
    }

    #[test]
    fn pointwise_path_is_bit_identical_to_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (cin, cout, h, w) in [(3, 5, 4, 4), (16, 19, 13, 11), (9, 8, 1, 300)] {
            let mut k = random_tensor(&mut rng, [cout, cin, 1, 1], 1.0);
            k.data_mut()[1] = 0.0;
            let bias = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = ConvParams::new(k, Some(bias), (1, 1), (1, 1), 1).unwrap();
            let x = random_tensor(&mut rng, [2, cin, h, w], 3.0);
            let out_shape = p.output_shape(x.shape()).unwrap();
            assert_eq!(
                pointwise(&x, &p, out_shape, None),
                general(&x, &p, out_shape, None)
            );
        }
    }

    #[test]
    fn conv_bn_epilogue_matches_separate_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (k, groups) in [(3, 1), (1, 1), (3, 4)] {
            let cin_g = if groups == 4 { 1 } else { 4 };
            let kern = random_tensor(&mut rng, [4, cin_g, k, k], 0.5);
            let p = ConvParams::new(kern, None, (1, 1), (2, 2), groups).unwrap();
            let bn = BatchNormParams {
                gamma: (0..4).map(|_| rng.random_range(0.5..1.5)).collect(),
                beta: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
                moving_mean: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
                moving_variance: (0..4).map(|_| rng.random_range(0.5..1.5)).collect(),
                epsilon: DEFAULT_BN_EPSILON,
            };
            let x = random_tensor(&mut rng, [1, 4, 6, 7], 3.0);
            let fused = conv2d_bn(&x, &p, &bn).unwrap();
            let separate = batch_norm(&conv2d(&x, &p).unwrap(), &bn).unwrap();
            assert!(fused.max_abs_diff(&separate) < 1e-5);
        }
        let p = ConvParams::simple(Tensor::zeros(Shape([2, 1, 1, 1]))).unwrap();
        let x = Tensor::zeros(Shape([1, 1, 2, 2]));
        assert!(conv2d_bn(&x, &p, &BatchNormParams::identity(3, 1e-3)).is_err());
    }
}
