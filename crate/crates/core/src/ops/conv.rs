//! Dilated 2-D convolution lowered to GEMM through an im2col buffer.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Shape, Tensor};

/// Kernel extent, stride, dilation and zero padding for both spatial axes
/// (`(vertical, horizontal)` pairs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let g = Self {
            kernel,
            stride,
            dilation,
            padding,
        };
        g.validate()?;
        Ok(g)
    }

    /// Stride-1 geometry that keeps the spatial size for odd kernels:
    /// padding `d*(k-1)/2` on each axis.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Result<Self> {
        Self::new(
            kernel,
            (1, 1),
            dilation,
            (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2),
        )
    }

    pub fn pointwise() -> Self {
        Self {
            kernel: (1, 1),
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("kernel height", self.kernel.0),
            ("kernel width", self.kernel.1),
            ("stride height", self.stride.0),
            ("stride width", self.stride.1),
            ("dilation height", self.dilation.0),
            ("dilation width", self.dilation.1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Geometry(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn axis_out(input: usize, kernel: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * pad;
        if padded < span {
            None
        } else {
            Some((padded - span) / stride + 1)
        }
    }

    /// Output `(height, width)` for an input of `(h, w)`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let oh = Self::axis_out(h, self.kernel.0, self.stride.0, self.dilation.0, self.padding.0)
            .ok_or_else(|| {
                Error::Geometry(format!(
                    "non-positive output height for input height {h} with kernel {} dilation {} padding {}",
                    self.kernel.0, self.dilation.0, self.padding.0
                ))
            })?;
        let ow = Self::axis_out(w, self.kernel.1, self.stride.1, self.dilation.1, self.padding.1)
            .ok_or_else(|| {
                Error::Geometry(format!(
                    "non-positive output width for input width {w} with kernel {} dilation {} padding {}",
                    self.kernel.1, self.dilation.1, self.padding.1
                ))
            })?;
        Ok((oh, ow))
    }

    fn is_pointwise(&self) -> bool {
        *self == Self::pointwise()
    }
}

fn check_operands<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeometry) -> Result<(usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.c != xs.c {
        return Err(Error::Shape {
            axis: "input channels",
            expected: ws.c,
            actual: xs.c,
        });
    }
    if ws.h != g.kernel.0 {
        return Err(Error::Shape {
            axis: "kernel height",
            expected: g.kernel.0,
            actual: ws.h,
        });
    }
    if ws.w != g.kernel.1 {
        return Err(Error::Shape {
            axis: "kernel width",
            expected: g.kernel.1,
            actual: ws.w,
        });
    }
    g.output_size(xs.h, xs.w)
}

/// Unfolds one sample `(c, h, w)` into `(c*kh*kw) x (oh*ow)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(src: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (dh, dw) = g.dilation;
    let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
    let ncol = oh * ow;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = ((ci * kh + u) * kw + v) * ncol;
                let dst = &mut cols[row..row + ncol];
                let x_off = (v * dw) as isize - pw;
                // Output columns j with 0 <= j*sw + x_off < w.
                let j_lo = if x_off >= 0 { 0 } else { ((-x_off) as usize).div_ceil(sw) };
                let j_hi = if (w as isize) <= x_off {
                    0
                } else {
                    ((w as isize - x_off) as usize).div_ceil(sw).min(ow)
                };
                for i in 0..oh {
                    let out = &mut dst[i * ow..(i + 1) * ow];
                    let hi = (i * sh + u * dh) as isize - ph;
                    if hi < 0 || hi >= h as isize || j_lo >= j_hi {
                        out.iter_mut().for_each(|e| *e = T::zero());
                        continue;
                    }
                    let src_row = &plane[hi as usize * w..(hi as usize + 1) * w];
                    out[..j_lo].iter_mut().for_each(|e| *e = T::zero());
                    out[j_hi..].iter_mut().for_each(|e| *e = T::zero());
                    let first = (j_lo * sw) as isize + x_off;
                    if sw == 1 {
                        let s = first as usize;
                        out[j_lo..j_hi].copy_from_slice(&src_row[s..s + (j_hi - j_lo)]);
                    } else {
                        for (k, e) in out[j_lo..j_hi].iter_mut().enumerate() {
                            *e = src_row[first as usize + k * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `(c, h, w)` sample.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, dst: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (dh, dw) = g.dilation;
    let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
    let ncol = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = ((ci * kh + u) * kw + v) * ncol;
                let src = &cols[row..row + ncol];
                let x_off = (v * dw) as isize - pw;
                let j_lo = if x_off >= 0 { 0 } else { ((-x_off) as usize).div_ceil(sw) };
                let j_hi = if (w as isize) <= x_off {
                    0
                } else {
                    ((w as isize - x_off) as usize).div_ceil(sw).min(ow)
                };
                if j_lo >= j_hi {
                    continue;
                }
                for i in 0..oh {
                    let hi = (i * sh + u * dh) as isize - ph;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let seg = &src[i * ow..(i + 1) * ow];
                    let dst_row = &mut plane[hi as usize * w..(hi as usize + 1) * w];
                    let first = ((j_lo * sw) as isize + x_off) as usize;
                    for (k, &e) in seg[j_lo..j_hi].iter().enumerate() {
                        dst_row[first + k * sw] += e;
                    }
                }
            }
        }
    }
}

/// `y[n,co,i,j] = b[co] + Σ w[co,ci,u,v]·x[n,ci,i·sh−ph+u·dh, j·sw−pw+v·dw]`,
/// out-of-range input taps read as zero.
///
/// `w` has shape `(c_out, c_in, kh, kw)`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&[T]>, g: &ConvGeometry) -> Result<Tensor<T>> {
    let (oh, ow) = check_operands(x, w, g)?;
    let xs = x.shape();
    let cout = w.shape().n;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape {
                axis: "bias length",
                expected: cout,
                actual: b.len(),
            });
        }
    }
    let kdim = xs.c * g.kernel.0 * g.kernel.1;
    let ncol = oh * ow;
    let mut y = Tensor::zeros(Shape::new(xs.n, cout, oh, ow));
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kdim * ncol] };
    for n in 0..xs.n {
        let out = y.sample_mut(n);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                out[co * ncol..(co + 1) * ncol].iter_mut().for_each(|e| *e = bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if pointwise {
            x.sample(n)
        } else {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, oh, ow, &mut cols);
            &cols
        };
        gemm(false, false, cout, ncol, kdim, T::one(), w.data(), rhs, beta, out);
    }
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to input, weight and (optionally) bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeometry,
    dy: &Tensor<T>,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = check_operands(x, w, g)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let expected = Shape::new(xs.n, cout, oh, ow);
    if dy.shape() != expected {
        return Err(Error::Invalid(format!(
            "conv2d backward: upstream gradient shape {} != output shape {}",
            dy.shape(),
            expected
        )));
    }
    let kdim = xs.c * g.kernel.0 * g.kernel.1;
    let ncol = oh * ow;
    let pointwise = g.is_pointwise();
    let mut dx = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); w.len()];
    let mut db = with_bias.then(|| vec![T::zero(); cout]);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kdim * ncol] };
    let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); kdim * ncol] };
    for n in 0..xs.n {
        let dyn_ = dy.sample(n);
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dyn_[co * ncol..(co + 1) * ncol].iter().copied().sum::<T>();
            }
        }
        if pointwise {
            gemm(false, true, cout, kdim, ncol, T::one(), dyn_, x.sample(n), T::one(), &mut dw);
            gemm(true, false, kdim, ncol, cout, T::one(), w.data(), dyn_, T::zero(), dx.sample_mut(n));
        } else {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, oh, ow, &mut cols);
            gemm(false, true, cout, kdim, ncol, T::one(), dyn_, &cols, T::one(), &mut dw);
            gemm(true, false, kdim, ncol, cout, T::one(), w.data(), dyn_, T::zero(), &mut dcols);
            col2im(&dcols, xs.c, xs.h, xs.w, g, oh, ow, dx.sample_mut(n));
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
