use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Stacks tensors along the channel axis in the given order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Invalid("concat_channels: empty input list".into()))?
        .shape();
    for t in &xs[1..] {
        let s = t.shape();
        for (axis, a, b) in [("batch", first.n, s.n), ("height", first.h, s.h), ("width", first.w, s.w)] {
            if a != b {
                return Err(Error::Shape {
                    axis,
                    expected: a,
                    actual: b,
                });
            }
        }
    }
    let c: usize = xs.iter().map(|t| t.shape().c).sum();
    let shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for t in xs {
            data.extend_from_slice(t.sample(n));
        }
    }
    Tensor::from_vec(shape, data)
}

/// Splits `x` along channels into consecutive pieces of the given widths.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = widths.iter().sum();
    if total != x.shape().c {
        return Err(Error::Shape {
            axis: "split channel total",
            expected: x.shape().c,
            actual: total,
        });
    }
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let part = x.slice_channels(offset, w);
            offset += w;
            part
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = Tensor::from_fn(Shape::new(2, 3, 2, 2), |i| i as f32);
        let b = Tensor::from_fn(Shape::new(2, 40, 2, 2), |i| -(i as f32));
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape().c, 43);
        let parts = split_channels(&y, &[3, 40]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert_eq!(y.slice_channels(3, 40).unwrap(), b);
    }

    #[test]
    fn single_input_is_identity() {
        let a = Tensor::from_fn(Shape::new(1, 2, 3, 3), |i| i as f64);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let b = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 4));
        let err = concat_channels(&[&a, &b]).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
        assert!(concat_channels::<f32>(&[]).is_err());
    }
}
