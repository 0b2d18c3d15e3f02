//! Pixel-wise softmax cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax along the channel (class) axis.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let s = logits.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let src = logits.sample(n);
        let dst = out.sample_mut(n);
        for p in 0..plane {
            let max = (0..s.c).map(|k| src[k * plane + p]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..s.c {
                let e = (src[k * plane + p] - max).exp();
                dst[k * plane + p] = e;
                sum += e;
            }
            for k in 0..s.c {
                dst[k * plane + p] /= sum;
            }
        }
    }
    out
}

/// Weighted mean of `−w[y]·log softmax(logits)[y]` over non-ignored pixels,
/// normalized by the summed weights. Returns the loss and its gradient with
/// respect to the logits (exactly zero at ignored pixels).
///
/// `labels` holds one class index per pixel in `(n, h, w)` order.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    class_weights: Option<&[T]>,
    ignore_index: Option<u8>,
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let plane = s.plane();
    if labels.len() != s.n * plane {
        return Err(Error::Shape {
            axis: "label count",
            expected: s.n * plane,
            actual: labels.len(),
        });
    }
    if let Some(w) = class_weights {
        if w.len() != s.c {
            return Err(Error::Shape {
                axis: "class weight length",
                expected: s.c,
                actual: w.len(),
            });
        }
    }
    let probs = softmax(logits);
    let mut grad = Tensor::zeros(s);
    let mut loss = 0.0f64;
    let mut norm = 0.0f64;
    for n in 0..s.n {
        let lp = probs.sample(n);
        let lg = logits.sample(n);
        for p in 0..plane {
            let y = labels[n * plane + p];
            if Some(y) == ignore_index {
                continue;
            }
            if y as usize >= s.c {
                return Err(Error::Invalid(format!(
                    "label {y} out of range for {} classes",
                    s.c
                )));
            }
            let w = class_weights.map_or(1.0, |cw| cw[y as usize].as_f64());
            // log-softmax computed directly for accuracy
            let max = (0..s.c).map(|k| lg[k * plane + p].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..s.c).map(|k| (lg[k * plane + p].as_f64() - max).exp()).sum::<f64>().ln();
            loss -= w * (lg[y as usize * plane + p].as_f64() - lse);
            norm += w;
            let g = grad.sample_mut(n);
            let wt = T::from_f64_lossy(w);
            for k in 0..s.c {
                let onehot = if k == y as usize { T::one() } else { T::zero() };
                g[k * plane + p] = wt * (lp[k * plane + p] - onehot);
            }
        }
    }
    if norm == 0.0 {
        return Err(Error::Invalid(
            "cross-entropy: no counted pixels (all ignored or zero weight)".into(),
        ));
    }
    let inv = T::from_f64_lossy(1.0 / norm);
    grad.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok((T::from_f64_lossy(loss / norm), grad))
}
