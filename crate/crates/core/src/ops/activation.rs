use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::Invalid(format!(
            "relu backward: gradient shape {} != input shape {}",
            dy.shape(),
            x.shape()
        )));
    }
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    }
    Ok(dx)
}

/// Inverted dropout: kept elements are scaled by `1/(1−p)`. Returns the
/// output and the per-element multiplier used, which is also the backward
/// mask.
pub fn dropout<T: Scalar>(x: &Tensor<T>, p: f64, rng: &mut SplitMix64) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Invalid(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if p > 0.0 && rng.next_f64() < p { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
        *g *= m;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0f32, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y), y);
        let dx = relu_backward(&x, &Tensor::full(x.shape(), 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_negative_blocks_gradient() {
        let x = Tensor::full(Shape::new(1, 2, 2, 2), -0.5f64);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        let dx = relu_backward(&x, &Tensor::full(x.shape(), 3.0)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_scales_kept_elements() {
        let x = Tensor::full(Shape::new(1, 1, 50, 50), 1.0f64);
        let mut rng = SplitMix64::new(3);
        let (y, mask) = dropout(&x, 0.2, &mut rng).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!(dropped > 350 && dropped < 650, "{dropped}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let dx = dropout_backward(&mask, &Tensor::full(x.shape(), 1.0));
        assert_eq!(dx.data(), y.data());
        let (same, _) = dropout(&x, 0.0, &mut rng).unwrap();
        assert_eq!(same, x);
        assert!(dropout(&x, 1.0, &mut rng).is_err());
    }
}
