//! Integer-factor bilinear upsampling with half-pixel centres and edge clamping.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Interpolation taps for one output coordinate: `(lo, hi, weight_of_hi)`.
fn taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::Invalid("upsample factor must be at least 1".into()));
    }
    Ok(())
}

pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let s = x.shape();
    if factor == 1 {
        return Ok(x.clone());
    }
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let rows = taps(os.h, s.h, factor);
    let cols: Vec<(usize, usize, T, T)> = taps(os.w, s.w, factor)
        .into_iter()
        .map(|(l, h, t)| (l, h, T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t)))
        .collect();
    let mut y = Tensor::zeros(os);
    let mut row_lo = vec![T::zero(); os.w];
    let mut row_hi = vec![T::zero(); os.w];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for (i, &(r0, r1, t)) in rows.iter().enumerate() {
                let (a, b) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
                for (j, &(c0, c1, wa, wb)) in cols.iter().enumerate() {
                    row_lo[j] = wa * src[r0 * s.w + c0] + wb * src[r0 * s.w + c1];
                    row_hi[j] = wa * src[r1 * s.w + c0] + wb * src[r1 * s.w + c1];
                }
                let out = &mut dst[i * os.w..(i + 1) * os.w];
                for ((o, &lo), &hi) in out.iter_mut().zip(&row_lo).zip(&row_hi) {
                    *o = a * lo + b * hi;
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Scalar>(dy: &Tensor<T>, input_shape: Shape, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let s = input_shape;
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    if dy.shape() != os {
        return Err(Error::Invalid(format!(
            "upsample backward: gradient shape {} != output shape {}",
            dy.shape(),
            os
        )));
    }
    if factor == 1 {
        return Ok(dy.clone());
    }
    let rows = taps(os.h, s.h, factor);
    let cols: Vec<(usize, usize, T, T)> = taps(os.w, s.w, factor)
        .into_iter()
        .map(|(l, h, t)| (l, h, T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t)))
        .collect();
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (i, &(r0, r1, t)) in rows.iter().enumerate() {
                let (a, b) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
                for (j, &(c0, c1, wa, wb)) in cols.iter().enumerate() {
                    let v = g[i * os.w + j];
                    dst[r0 * s.w + c0] += a * wa * v;
                    dst[r0 * s.w + c1] += a * wb * v;
                    dst[r1 * s.w + c0] += b * wa * v;
                    dst[r1 * s.w + c1] += b * wb * v;
                }
            }
        }
    }
    Ok(dx)
}
