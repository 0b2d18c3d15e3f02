//! Per-channel batch normalization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize by batch statistics and update the running estimates.
    Train,
    /// Normalize by the running estimates.
    Infer,
}

/// Saved state for [`batchnorm2d_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    mode: NormMode,
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

fn check_len(axis: &'static str, expected: usize, v: usize) -> Result<()> {
    if v != expected {
        return Err(Error::Shape {
            axis,
            expected,
            actual: v,
        });
    }
    Ok(())
}

/// Batch normalization over `N·H·W` for each channel.
///
/// Batch variance uses the population formula; the running variance is
/// updated with the unbiased estimate, `running ← (1−m)·running + m·batch`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: NormMode,
    momentum: T,
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = x.shape();
    check_len("batchnorm gamma length", s.c, gamma.len())?;
    check_len("batchnorm beta length", s.c, beta.len())?;
    check_len("batchnorm running_mean length", s.c, running_mean.len())?;
    check_len("batchnorm running_var length", s.c, running_var.len())?;
    if !(eps > T::zero()) {
        return Err(Error::Invalid(format!("batchnorm eps must be positive, got {eps}")));
    }
    let count = s.n * s.plane();
    let mut x_hat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += x.plane(n, c).iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                let m = momentum.as_f64();
                running_mean[c] = T::from_f64_lossy((1.0 - m) * running_mean[c].as_f64() + m * mean);
                running_var[c] = T::from_f64_lossy((1.0 - m) * running_var[c].as_f64() + m * unbiased);
                (T::from_f64_lossy(mean), T::from_f64_lossy(var))
            }
            NormMode::Infer => (running_mean[c], running_var[c]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        for n in 0..s.n {
            let src = x.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (o, &v) in xh.iter_mut().zip(src) {
                *o = (v - mean) * istd;
            }
            let yy = y.plane_mut(n, c);
            for (o, &v) in yy.iter_mut().zip(x_hat.plane(n, c)) {
                *o = gamma[c] * v + beta[c];
            }
        }
    }
    Ok((y, BnCache { mode, x_hat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = cache.x_hat.shape();
    if dy.shape() != s {
        return Err(Error::Invalid(format!(
            "batchnorm backward: gradient shape {} != input shape {}",
            dy.shape(),
            s
        )));
    }
    check_len("batchnorm gamma length", s.c, gamma.len())?;
    let count = T::from_usize(s.n * s.plane()).unwrap();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
        for n in 0..s.n {
            for (&g, &xh) in dy.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_dy += g;
                sum_dy_xh += g * xh;
            }
        }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xh;
        let scale = gamma[c] * cache.inv_std[c];
        match cache.mode {
            NormMode::Infer => {
                for n in 0..s.n {
                    let src = dy.plane(n, c);
                    for (o, &g) in dx.plane_mut(n, c).iter_mut().zip(src) {
                        *o = scale * g;
                    }
                }
            }
            NormMode::Train => {
                let mean_dy = sum_dy / count;
                let mean_dy_xh = sum_dy_xh / count;
                for n in 0..s.n {
                    let g_plane = dy.plane(n, c);
                    let xh_plane = cache.x_hat.plane(n, c);
                    let out = dx.plane_mut(n, c);
                    for ((o, &g), &xh) in out.iter_mut().zip(g_plane).zip(xh_plane) {
                        *o = scale * (g - mean_dy - xh * mean_dy_xh);
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn run(x: &Tensor<f64>, mode: NormMode, eps: f64) -> Result<Tensor<f64>> {
        let c = x.shape().c;
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        batchnorm2d(x, &vec![1.0; c], &vec![0.0; c], &mut rm, &mut rv, mode, 0.1, eps).map(|r| r.0)
    }

    #[test]
    fn infer_with_unit_stats_is_identity() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2), |i| i as f64 * 0.3 - 1.0);
        let y = run(&x, NormMode::Infer, 1e-12).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn constant_input_collapses_to_beta() {
        let x = Tensor::full(Shape::new(2, 2, 3, 3), 5.0f64);
        let (mut rm, mut rv) = (vec![0.0f64; 2], vec![1.0; 2]);
        let (y, _) = batchnorm2d(&x, &[2.0, 3.0], &[0.5, -0.25], &mut rm, &mut rv, NormMode::Train, 0.1, 1e-5).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| (v - 0.5).abs() < 1e-9));
            assert!(y.plane(n, 1).iter().all(|&v| (v + 0.25).abs() < 1e-9));
        }
        // Running mean moves toward the batch mean by the momentum.
        assert!((rm[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_point_population_variance() {
        // The eps > 0 contract forbids the exact eps = 0 case; 1e-300 is
        // indistinguishable from it in f64.
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 2.0]).unwrap();
        let y = run(&x, NormMode::Train, 1e-300).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(run(&x, NormMode::Train, 0.0).is_err());
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let err = batchnorm2d(&x, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, NormMode::Train, 0.1, 1e-5)
            .unwrap_err()
            .to_string();
        assert!(err.contains("gamma"), "{err}");
    }
}
