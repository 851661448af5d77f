use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn nhwc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::shape(op, format!("expected n×h×w×c input, got {shape:?}"))),
    }
}

struct MaxPoolBackward {
    /// Flat input index of the winning element of each output.
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let mut gx = Tensor::zeros(parents[0].shape());
        let d = gx.data_mut();
        for (&src, &gv) in self.argmax.iter().zip(grad.data()) {
            d[src] = d[src] + gv;
        }
        vec![Some(gx)]
    }
}

/// 2×2 max pooling with stride 2. Odd trailing rows/columns are treated
/// as padded with −∞. Among equal maxima the lowest flat index wins.
pub fn max_pool2d<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let xv = g.try_value(x)?;
    let (n, h, w, c) = nhwc("max_pool2d", xv.shape())?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let xd = xv.data();
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0usize; n * oh * ow * c];
    let od = out.data_mut();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for iy in 2 * oy..(2 * oy + 2).min(h) {
                        for ix in 2 * ox..(2 * ox + 2).min(w) {
                            let idx = ((b * h + iy) * w + ix) * c + ch;
                            if best_idx == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    od[base + ch] = best;
                    argmax[base + ch] = best_idx;
                }
            }
        }
    }
    Ok(g.record(out, &[x], MaxPoolBackward { argmax }))
}

struct GapBackward;

impl<T: Scalar> Backward<T> for GapBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = parents[0].shape();
        let (hw, c) = (s[1] * s[2], s[3]);
        let inv = T::one() / T::from_usize(hw).expect("fits");
        let gd = grad.data();
        let gx = Tensor::from_fn(s, |i| {
            let b = i / (hw * c);
            gd[b * c + i % c] * inv
        });
        vec![Some(gx)]
    }
}

/// Mean over all spatial positions: `n×h×w×c → n×c`.
pub fn global_avg_pool2d<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let xv = g.try_value(x)?;
    let (n, h, w, c) = nhwc("global_avg_pool2d", xv.shape())?;
    let hw = h * w;
    let xd = xv.data();
    let mut out = Tensor::zeros(&[n, c]);
    let od = out.data_mut();
    for b in 0..n {
        let o = &mut od[b * c..(b + 1) * c];
        for p in 0..hw {
            for (d, &v) in o.iter_mut().zip(&xd[(b * hw + p) * c..][..c]) {
                *d = *d + v;
            }
        }
        let inv = T::from_usize(hw).expect("fits");
        o.iter_mut().for_each(|v| *v = *v / inv);
    }
    Ok(g.record(out, &[x], GapBackward))
}

/// Softmax over every element of a flat slice, max-subtracted.
pub(crate) fn softmax_flat<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

struct WeightedGapBackward<T> {
    weights: Vec<T>,
}

impl<T: Scalar> Backward<T> for WeightedGapBackward<T> {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (x, logits) = (parents[0], parents[1]);
        let s = x.shape();
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let (xd, gd, w) = (x.data(), grad.data(), &self.weights);
        let gx = needs[0].then(|| {
            Tensor::from_fn(s, |i| {
                let (b, p, ch) = (i / (hw * c), (i / c) % hw, i % c);
                w[p] * gd[b * c + ch]
            })
        });
        let gl = needs[1].then(|| {
            // dL/dw_p = Σ_{b,c} g[b,c]·x[b,p,c]; then through the softmax.
            let dw: Vec<T> = (0..hw)
                .map(|p| {
                    let mut acc = T::zero();
                    for b in 0..n {
                        let xs = &xd[(b * hw + p) * c..][..c];
                        let gs = &gd[b * c..][..c];
                        acc = acc + xs.iter().zip(gs).map(|(&a, &g)| a * g).sum::<T>();
                    }
                    acc
                })
                .collect();
            let dot: T = dw.iter().zip(w).map(|(&d, &wp)| d * wp).sum();
            Tensor::from_fn(logits.shape(), |p| w[p] * (dw[p] - dot))
        });
        vec![gx, gl]
    }
}

/// Spatially weighted average: `out[n,c] = Σ_p softmax(logits)_p · x[n,p,c]`.
/// With constant logits this is [`global_avg_pool2d`].
pub fn weighted_global_avg_pool<T: Scalar>(g: &mut Graph<T>, x: Var, spatial_logits: Var) -> Result<Var> {
    let (xv, lv) = (g.try_value(x)?, g.try_value(spatial_logits)?);
    let (n, h, w, c) = nhwc("weighted_global_avg_pool", xv.shape())?;
    if lv.shape() != [h, w] {
        return Err(Error::shape(
            "weighted_global_avg_pool",
            format!("logits {:?} do not match the {h}×{w} feature map", lv.shape()),
        ));
    }
    let hw = h * w;
    let weights = softmax_flat(lv.data());
    let xd = xv.data();
    let mut out = Tensor::zeros(&[n, c]);
    let od = out.data_mut();
    for b in 0..n {
        let o = &mut od[b * c..(b + 1) * c];
        for (p, &wp) in weights.iter().enumerate() {
            for (d, &v) in o.iter_mut().zip(&xd[(b * hw + p) * c..][..c]) {
                *d = *d + wp * v;
            }
        }
    }
    Ok(g.record(out, &[x, spatial_logits], WeightedGapBackward { weights }))
}
