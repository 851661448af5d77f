//! NHWC convolutions: standard (im2col + GEMM), depthwise, pointwise and
//! their separable composition. All use cross-correlation (no kernel flip).

use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output size `ceil(in / stride)`; any odd padding pixel goes bottom/right.
    Same,
    /// No padding; output size `(in - k) / stride + 1`.
    Valid,
}

/// Kernel, bias and hyper-parameters of one convolution.
///
/// `kernel` is `kh×kw×c_in×c_out` for standard and pointwise convolutions and
/// `kh×kw×c` for depthwise ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> ConvParams<T> {
    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Spatial bookkeeping shared by every convolution-like op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn new(
        op: &'static str,
        x_shape: &[usize],
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if x_shape.len() != 4 {
            return Err(Error::shape(op, format!("expected n×h×w×c input, got {x_shape:?}")));
        }
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid(format!("{op}: stride and kernel size must be positive")));
        }
        let (n, h, w, c) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(op, format!("{kh}×{kw} kernel is larger than the {h}×{w} input")));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
        };
        Ok(Self { n, h, w, c, kh, kw, stride, oh, ow, pad_top, pad_left })
    }

    /// Input row/column read by output position `o` at kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    #[inline]
    pub fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        self.src(oy, ky, self.pad_top, self.h)
    }

    #[inline]
    pub fn src_col(&self, ox: usize, kx: usize) -> Option<usize> {
        self.src(ox, kx, self.pad_left, self.w)
    }
}

fn im2col<T: Scalar>(x: &[T], geo: &Geometry) -> Vec<T> {
    let k = geo.kh * geo.kw * geo.c;
    let rows = geo.n * geo.oh * geo.ow;
    let mut cols = vec![T::zero(); rows * k];
    let mut r = 0;
    for b in 0..geo.n {
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let row = &mut cols[r * k..(r + 1) * k];
                for ky in 0..geo.kh {
                    let Some(iy) = geo.src_row(oy, ky) else { continue };
                    for kx in 0..geo.kw {
                        let Some(ix) = geo.src_col(ox, kx) else { continue };
                        let src = ((b * geo.h + iy) * geo.w + ix) * geo.c;
                        let dst = (ky * geo.kw + kx) * geo.c;
                        row[dst..dst + geo.c].copy_from_slice(&x[src..src + geo.c]);
                    }
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], geo: &Geometry, x_shape: &[usize]) -> Tensor<T> {
    let k = geo.kh * geo.kw * geo.c;
    let mut gx = Tensor::zeros(x_shape);
    let out = gx.data_mut();
    let mut r = 0;
    for b in 0..geo.n {
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let row = &cols[r * k..(r + 1) * k];
                for ky in 0..geo.kh {
                    let Some(iy) = geo.src_row(oy, ky) else { continue };
                    for kx in 0..geo.kw {
                        let Some(ix) = geo.src_col(ox, kx) else { continue };
                        let dst = ((b * geo.h + iy) * geo.w + ix) * geo.c;
                        let src = (ky * geo.kw + kx) * geo.c;
                        for (o, &v) in out[dst..dst + geo.c].iter_mut().zip(&row[src..src + geo.c]) {
                            *o = *o + v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
    gx
}

struct Conv2dBackward<T> {
    geo: Geometry,
    cols: Vec<T>,
    c_out: usize,
}

impl<T: Scalar> Backward<T> for Conv2dBackward<T> {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, kernel) = (parents[0], parents[1]);
        let geo = &self.geo;
        let k = geo.kh * geo.kw * geo.c;
        let rows = geo.n * geo.oh * geo.ow;
        let co = self.c_out as isize;
        let gx = needs[0].then(|| {
            let mut gcols = vec![T::zero(); rows * k];
            T::gemm(
                rows,
                self.c_out,
                k,
                grad.data(),
                (co, 1),
                kernel.data(),
                (1, co),
                T::zero(),
                &mut gcols,
                (k as isize, 1),
            );
            col2im(&gcols, geo, x.shape())
        });
        let gk = needs[1].then(|| {
            let mut gk = Tensor::zeros(kernel.shape());
            T::gemm(
                k,
                rows,
                self.c_out,
                &self.cols,
                (1, k as isize),
                grad.data(),
                (co, 1),
                T::zero(),
                gk.data_mut(),
                (co, 1),
            );
            gk
        });
        vec![gx, gk]
    }
}

fn add_bias<T: Scalar>(g: &mut Graph<T>, y: Var, bias: Option<Var>, c_out: usize) -> Result<Var> {
    match bias {
        None => Ok(y),
        Some(b) => {
            if g.try_value(b)?.shape() != [c_out] {
                return Err(Error::shape("bias", format!("expected [{c_out}], got {:?}", g.value(b).shape())));
            }
            ops::add(g, y, b)
        }
    }
}

/// Standard 2-D convolution of an `n×h×w×c_in` input with a
/// `kh×kw×c_in×c_out` kernel.
pub fn conv2d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let (xv, kv) = (g.try_value(x)?, g.try_value(kernel)?);
    if kv.rank() != 4 {
        return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {:?}", kv.shape())));
    }
    let (kh, kw, ci, c_out) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
    let geo = Geometry::new("conv2d", xv.shape(), kh, kw, stride, padding)?;
    if geo.c != ci {
        return Err(Error::shape("conv2d", format!("input has {} channels, kernel expects {ci}", geo.c)));
    }
    let cols = im2col(xv.data(), &geo);
    let k = kh * kw * ci;
    let rows = geo.n * geo.oh * geo.ow;
    let mut out = Tensor::zeros(&[geo.n, geo.oh, geo.ow, c_out]);
    let co = c_out as isize;
    T::gemm(rows, k, c_out, &cols, (k as isize, 1), kv.data(), (co, 1), T::zero(), out.data_mut(), (co, 1));
    let y = g.record(out, &[x, kernel], Conv2dBackward { geo, cols, c_out });
    add_bias(g, y, bias, c_out)
}

struct DepthwiseBackward {
    geo: Geometry,
}

impl<T: Scalar> Backward<T> for DepthwiseBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, kernel) = (parents[0], parents[1]);
        let geo = &self.geo;
        let c = geo.c;
        let (xd, kd, gd) = (x.data(), kernel.data(), grad.data());
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gk = needs[1].then(|| Tensor::zeros(kernel.shape()));
        for b in 0..geo.n {
            for oy in 0..geo.oh {
                for ox in 0..geo.ow {
                    let go = &gd[((b * geo.oh + oy) * geo.ow + ox) * c..][..c];
                    for ky in 0..geo.kh {
                        let Some(iy) = geo.src_row(oy, ky) else { continue };
                        for kx in 0..geo.kw {
                            let Some(ix) = geo.src_col(ox, kx) else { continue };
                            let xi = ((b * geo.h + iy) * geo.w + ix) * c;
                            let ki = (ky * geo.kw + kx) * c;
                            if let Some(gx) = gx.as_mut() {
                                let dst = &mut gx.data_mut()[xi..xi + c];
                                for ((d, &gv), &kv) in dst.iter_mut().zip(go).zip(&kd[ki..ki + c]) {
                                    *d = *d + gv * kv;
                                }
                            }
                            if let Some(gk) = gk.as_mut() {
                                let dst = &mut gk.data_mut()[ki..ki + c];
                                for ((d, &gv), &xv) in dst.iter_mut().zip(go).zip(&xd[xi..xi + c]) {
                                    *d = *d + gv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![gx, gk]
    }
}

/// Per-channel spatial convolution with a `kh×kw×c` kernel; output channel
/// `i` reads only input channel `i`.
pub fn depthwise_conv2d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let (xv, kv) = (g.try_value(x)?, g.try_value(kernel)?);
    if kv.rank() != 3 {
        return Err(Error::shape("depthwise_conv2d", format!("kernel must be kh×kw×c, got {:?}", kv.shape())));
    }
    let (kh, kw, kc) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
    let geo = Geometry::new("depthwise_conv2d", xv.shape(), kh, kw, stride, padding)?;
    if kc != geo.c {
        return Err(Error::shape("depthwise_conv2d", format!("kernel has {kc} channels, input has {}", geo.c)));
    }
    let c = geo.c;
    let (xd, kd) = (xv.data(), kv.data());
    let mut out = Tensor::zeros(&[geo.n, geo.oh, geo.ow, c]);
    let od = out.data_mut();
    for b in 0..geo.n {
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let o = &mut od[((b * geo.oh + oy) * geo.ow + ox) * c..][..c];
                for ky in 0..geo.kh {
                    let Some(iy) = geo.src_row(oy, ky) else { continue };
                    for kx in 0..geo.kw {
                        let Some(ix) = geo.src_col(ox, kx) else { continue };
                        let xs = &xd[((b * geo.h + iy) * geo.w + ix) * c..][..c];
                        let ks = &kd[(ky * geo.kw + kx) * c..][..c];
                        for ((d, &xv), &kv) in o.iter_mut().zip(xs).zip(ks) {
                            *d = *d + xv * kv;
                        }
                    }
                }
            }
        }
    }
    let y = g.record(out, &[x, kernel], DepthwiseBackward { geo });
    add_bias(g, y, bias, c)
}

struct PointwiseBackward {
    pixels: usize,
    c_in: usize,
    c_out: usize,
}

impl<T: Scalar> Backward<T> for PointwiseBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, kernel) = (parents[0], parents[1]);
        let (p, ci, co) = (self.pixels, self.c_in, self.c_out);
        let (cii, coi) = (ci as isize, co as isize);
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x.shape());
            T::gemm(p, co, ci, grad.data(), (coi, 1), kernel.data(), (1, coi), T::zero(), gx.data_mut(), (cii, 1));
            gx
        });
        let gk = needs[1].then(|| {
            let mut gk = Tensor::zeros(kernel.shape());
            T::gemm(ci, p, co, x.data(), (1, cii), grad.data(), (coi, 1), T::zero(), gk.data_mut(), (coi, 1));
            gk
        });
        vec![gx, gk]
    }
}

/// 1×1 convolution: a per-pixel linear map across channels.
pub fn pointwise_conv2d<T: Scalar>(g: &mut Graph<T>, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
    let (xv, kv) = (g.try_value(x)?, g.try_value(kernel)?);
    if kv.rank() != 4 || kv.shape()[0] != 1 || kv.shape()[1] != 1 {
        return Err(Error::shape("pointwise_conv2d", format!("kernel must be 1×1×c_in×c_out, got {:?}", kv.shape())));
    }
    if xv.rank() != 4 {
        return Err(Error::shape("pointwise_conv2d", format!("expected n×h×w×c input, got {:?}", xv.shape())));
    }
    let (ci, co) = (kv.shape()[2], kv.shape()[3]);
    let s = xv.shape();
    if s[3] != ci {
        return Err(Error::shape("pointwise_conv2d", format!("input has {} channels, kernel expects {ci}", s[3])));
    }
    let pixels = s[0] * s[1] * s[2];
    let mut out = Tensor::zeros(&[s[0], s[1], s[2], co]);
    T::gemm(
        pixels,
        ci,
        co,
        xv.data(),
        (ci as isize, 1),
        kv.data(),
        (co as isize, 1),
        T::zero(),
        out.data_mut(),
        (co as isize, 1),
    );
    let y = g.record(out, &[x, kernel], PointwiseBackward { pixels, c_in: ci, c_out: co });
    add_bias(g, y, bias, co)
}

/// Handles of the four tensors of a depthwise-separable convolution.
#[derive(Clone, Copy, Debug)]
pub struct SeparableVars {
    pub depthwise_kernel: Var,
    pub depthwise_bias: Var,
    pub pointwise_kernel: Var,
    pub pointwise_bias: Var,
}

/// Depthwise convolution (stride 1, same padding) followed by a pointwise one.
pub fn separable_conv2d<T: Scalar>(g: &mut Graph<T>, x: Var, p: &SeparableVars) -> Result<Var> {
    let d = depthwise_conv2d(g, x, p.depthwise_kernel, Some(p.depthwise_bias), 1, Padding::Same)?;
    pointwise_conv2d(g, d, p.pointwise_kernel, Some(p.pointwise_bias))
}

/// Parameter count of a `k×k` separable convolution from `c_in` to `c_out`
/// channels, biases included.
pub fn separable_param_count(k: usize, c_in: usize, c_out: usize) -> usize {
    (k * k * c_in + c_in) + (c_in * c_out + c_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_fn(&[1, 3, 3, 1], |i| i as f64);
        let x = g.constant(xv.clone());
        let k = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = conv2d(&mut g, x, k, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn all_ones_valid_conv_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 3, 3, 1]));
        let k = g.constant(Tensor::ones(&[3, 3, 1, 1]));
        let y = conv2d(&mut g, x, k, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2, 1]));
        let k = g.constant(Tensor::ones(&[3, 3, 1, 1]));
        assert!(conv2d(&mut g, x, k, None, 1, Padding::Valid).is_err());
    }

    #[test]
    fn same_padding_output_size() {
        for (h, s, expect) in [(8, 2, 4), (7, 2, 4), (5, 1, 5), (9, 3, 3)] {
            let geo = Geometry::new("t", &[1, h, h, 1], 3, 3, s, Padding::Same).unwrap();
            assert_eq!(geo.oh, expect);
        }
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, padding) in &[(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid), (2, Padding::Valid)] {
            let x = rand_tensor(&mut rng, &[1, 8, 8, 3]);
            let k = rand_tensor(&mut rng, &[3, 3, 3, 4]);
            let expect = naive::conv2d(&x, &k, stride, padding);
            let mut g = Graph::new();
            let (xv, kv) = (g.constant(x), g.constant(k));
            let y = conv2d(&mut g, xv, kv, None, stride, padding).unwrap();
            assert!(g.value(y).max_abs_diff(&expect).unwrap() < 1e-5);
        }
    }

    #[test]
    fn depthwise_scales_channels() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64 + 1.0);
        let x = g.constant(xv.clone());
        let k = g.constant(Tensor::from_slice(&[1, 1, 2], &[2.0, 3.0]).unwrap());
        let y = depthwise_conv2d(&mut g, x, k, None, 1, Padding::Same).unwrap();
        let expect: Vec<f64> =
            xv.data().iter().enumerate().map(|(i, v)| v * if i % 2 == 0 { 2.0 } else { 3.0 }).collect();
        assert_eq!(g.value(y).data(), expect.as_slice());
    }

    #[test]
    fn depthwise_zero_kernel_yields_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 3, 3, 2]));
        let k = g.constant(Tensor::zeros(&[3, 3, 2]));
        let b = g.constant(Tensor::from_slice(&[2], &[0.5, -1.0]).unwrap());
        let y = depthwise_conv2d(&mut g, x, k, Some(b), 1, Padding::Same).unwrap();
        assert!(g.value(y).data().chunks(2).all(|c| c == [0.5, -1.0]));
    }

    #[test]
    fn depthwise_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 3, 3, 2]));
        let k = g.constant(Tensor::zeros(&[3, 3, 3]));
        assert!(depthwise_conv2d(&mut g, x, k, None, 1, Padding::Same).is_err());
    }

    #[test]
    fn depthwise_equals_block_diagonal_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 6, 5, 3]);
        let k = rand_tensor(&mut rng, &[3, 3, 3]);
        let full = Tensor::from_fn(&[3, 3, 3, 3], |i| {
            let (co, ci, tap) = (i % 3, (i / 3) % 3, i / 9);
            if ci == co {
                k.data()[tap * 3 + ci]
            } else {
                0.0
            }
        });
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (kv, fv) = (g.constant(k), g.constant(full));
        let a = depthwise_conv2d(&mut g, xv, kv, None, 2, Padding::Same).unwrap();
        let b = conv2d(&mut g, xv, fv, None, 2, Padding::Same).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)).unwrap() < 1e-6);
    }

    #[test]
    fn pointwise_identity_and_rejects_wide_kernel() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64 * 0.5);
        let x = g.constant(xv.clone());
        let k = g.constant(Tensor::eye(3).reshape(&[1, 1, 3, 3]).unwrap());
        let y = pointwise_conv2d(&mut g, x, k, None).unwrap();
        assert_eq!(g.value(y), &xv);
        let wide = g.constant(Tensor::zeros(&[3, 3, 3, 3]));
        assert!(pointwise_conv2d(&mut g, x, wide, None).is_err());
    }

    #[test]
    fn pointwise_matches_conv2d_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[2, 4, 3, 5]);
        let k = rand_tensor(&mut rng, &[1, 1, 5, 7]);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x), g.constant(k));
        let a = pointwise_conv2d(&mut g, xv, kv, None).unwrap();
        let b = conv2d(&mut g, xv, kv, None, 1, Padding::Valid).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)).unwrap() < 1e-6);
    }

    #[test]
    fn separable_is_exact_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::<f32>::new();
        let x = g.constant(rand_tensor(&mut rng, &[2, 5, 5, 4]).cast());
        let p = SeparableVars {
            depthwise_kernel: g.constant(rand_tensor(&mut rng, &[3, 3, 4]).cast()),
            depthwise_bias: g.constant(rand_tensor(&mut rng, &[4]).cast()),
            pointwise_kernel: g.constant(rand_tensor(&mut rng, &[1, 1, 4, 6]).cast()),
            pointwise_bias: g.constant(rand_tensor(&mut rng, &[6]).cast()),
        };
        let s = separable_conv2d(&mut g, x, &p).unwrap();
        let d = depthwise_conv2d(&mut g, x, p.depthwise_kernel, Some(p.depthwise_bias), 1, Padding::Same).unwrap();
        let c = pointwise_conv2d(&mut g, d, p.pointwise_kernel, Some(p.pointwise_bias)).unwrap();
        let bits = |v: Var| g.value(v).data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(s), bits(c));
    }

    #[test]
    fn separable_parameter_savings() {
        assert_eq!(separable_param_count(3, 64, 64), 576 + 64 + 4096 + 64);
        assert_eq!(separable_param_count(3, 64, 64), 4800);
        // A full 3×3 convolution needs 36864 weights + 64 biases, over 7× more.
        let full = 3 * 3 * 64 * 64 + 64;
        assert!(7 * separable_param_count(3, 64, 64) < full);
    }
}
