//! Straightforward loop implementations used as test oracles.
//!
//! These deliberately share no code with the optimized kernels: padding,
//! indexing and accumulation are re-derived here from the definitions.

use crate::layers::Padding;
use crate::tensor::Tensor;

fn out_and_pad(size: usize, k: usize, stride: usize, padding: Padding) -> (usize, i64) {
    match padding {
        Padding::Valid => ((size - k) / stride + 1, 0),
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k) as i64 - size as i64;
            (out, total.max(0) / 2)
        }
    }
}

/// Seven nested loops over batch, output rows/cols, output channel, kernel
/// rows/cols and input channel.
pub fn conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let [n, h, w, ci] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [kh, kw, _, co] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let (oh, pt) = out_and_pad(h, kh, stride, padding);
    let (ow, pl) = out_and_pad(w, kw, stride, padding);
    let mut out = Tensor::zeros(&[n, oh, ow, co]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for c in 0..ci {
                                let iy = (oy * stride + ky) as i64 - pt;
                                let ix = (ox * stride + kx) as i64 - pl;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xi = ((b * h + iy as usize) * w + ix as usize) * ci + c;
                                let ki = ((ky * kw + kx) * ci + c) * co + o;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out.data_mut()[((b * oh + oy) * ow + ox) * co + o] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let [n, h, w, c] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [kh, kw, _] = <[usize; 3]>::try_from(k.shape()).unwrap();
    let (oh, pt) = out_and_pad(h, kh, stride, padding);
    let (ow, pl) = out_and_pad(w, kw, stride, padding);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pt;
                            let ix = (ox * stride + kx) as i64 - pl;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += x.data()[((b * h + iy as usize) * w + ix as usize) * c + ch]
                                * k.data()[(ky * kw + kx) * c + ch];
                        }
                    }
                    out.data_mut()[((b * oh + oy) * ow + ox) * c + ch] = acc;
                }
            }
        }
    }
    out
}

pub fn pointwise_conv2d(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, ci] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let co = k.shape()[3];
    let mut out = Tensor::zeros(&[n, h, w, co]);
    for p in 0..n * h * w {
        for o in 0..co {
            let mut acc = 0.0;
            for c in 0..ci {
                acc += x.data()[p * ci + c] * k.data()[c * co + o];
            }
            out.data_mut()[p * co + o] = acc;
        }
    }
    out
}

pub fn max_pool2d(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                            if iy < h && ix < w {
                                best = best.max(x.data()[((b * h + iy) * w + ix) * c + ch]);
                            }
                        }
                    }
                    out.data_mut()[((b * oh + oy) * ow + ox) * c + ch] = best;
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = <[usize; 4]>::try_from(x.shape()).unwrap();
    Tensor::from_fn(&[n, c], |i| {
        let (b, ch) = (i / c, i % c);
        let total: f64 = (0..h * w).map(|p| x.data()[(b * h * w + p) * c + ch]).sum();
        total / (h * w) as f64
    })
}

/// `Σ_p w_p x[n,p,c]` with `w = exp(l) / Σ exp(l)` (no max subtraction).
pub fn weighted_gap(x: &Tensor<f64>, logits: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let z: f64 = logits.data().iter().map(|l| l.exp()).sum();
    Tensor::from_fn(&[n, c], |i| {
        let (b, ch) = (i / c, i % c);
        (0..h * w).map(|p| logits.data()[p].exp() / z * x.data()[(b * h * w + p) * c + ch]).sum()
    })
}

pub fn matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::from_fn(&[m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum()
    })
}

/// `x·W + b` without activation.
pub fn dense(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut y = matmul(x, w);
    let n = b.len();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        *v += b.data()[i % n];
    }
    y
}
