//! 2×2 stride-2 pooling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn halved(s: Shape) -> Result<Shape> {
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Geometry(format!(
            "2x2 pooling needs even spatial size, got {}x{}",
            s.h, s.w
        )));
    }
    Ok(Shape::new(s.n, s.c, s.h / 2, s.w / 2))
}

/// Max pooling. Also returns, per output element, the flat input index of
/// the selected element (first maximum in row-major window order).
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    let os = halved(s)?;
    let mut y = Tensor::zeros(os);
    let mut arg = vec![0u32; os.len()];
    let data = x.data();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    let mut best = s.index(n, c, 2 * i, 2 * j);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = s.index(n, c, 2 * i + di, 2 * j + dj);
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    y.data_mut()[o] = data[best];
                    arg[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2d_backward<T: Scalar>(input_shape: Shape, argmax: &[u32], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let os = halved(input_shape)?;
    if dy.shape() != os || argmax.len() != os.len() {
        return Err(Error::Invalid(format!(
            "maxpool backward: gradient shape {} does not match pooled shape {}",
            dy.shape(),
            os
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let out = dx.data_mut();
    for (&g, &idx) in dy.data().iter().zip(argmax) {
        out[idx as usize] += g;
    }
    Ok(dx)
}

/// Average pooling over the same windows.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = halved(s)?;
    let quarter = T::from_f64_lossy(0.25);
    let mut y = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for i in 0..os.h {
                for j in 0..os.w {
                    let a = 2 * i * s.w + 2 * j;
                    dst[i * os.w + j] = quarter * (src[a] + src[a + 1] + src[a + s.w] + src[a + s.w + 1]);
                }
            }
        }
    }
    Ok(y)
}

pub fn avgpool2d_backward<T: Scalar>(input_shape: Shape, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let os = halved(input_shape)?;
    if dy.shape() != os {
        return Err(Error::Invalid(format!(
            "avgpool backward: gradient shape {} does not match pooled shape {}",
            dy.shape(),
            os
        )));
    }
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = Tensor::zeros(input_shape);
    let s = input_shape;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for i in 0..os.h {
                for j in 0..os.w {
                    let g = quarter * src[i * os.w + j];
                    let a = 2 * i * s.w + 2 * j;
                    dst[a] += g;
                    dst[a + 1] += g;
                    dst[a + s.w] += g;
                    dst[a + s.w + 1] += g;
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_window_and_argmax_routing() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dy = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let dx = maxpool2d_backward(x.shape(), &arg, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_route_to_first_occurrence() {
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 7.0f32);
        let (_, arg) = maxpool2d(&x).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn constant_input_halves() {
        let x = Tensor::full(Shape::new(2, 3, 4, 6), 1.5f32);
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 2, 3));
        assert!(y.data().iter().all(|&v| v == 1.5));
        let a = avgpool2d(&x).unwrap();
        assert!(a.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn odd_sizes_rejected() {
        assert!(maxpool2d(&Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4))).is_err());
        assert!(maxpool2d(&Tensor::<f32>::zeros(Shape::new(1, 1, 4, 5))).is_err());
    }
}
