//! The composite blocks every network here is assembled from: the EDA
//! module, the downsampling block and the classification head.
//!
//! Each block runs in one of three [`Mode`]s and keeps the activations of its
//! last `forward` call so that `backward` can accumulate parameter gradients
//! and return the input gradient.

use crate::error::{Error, Result};
use crate::ops::{self, BnCache, ConvGeometry, NormMode};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-3;
pub const DEFAULT_DROPOUT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, active dropout.
    Train,
    /// Running statistics, dropout disabled.
    Infer,
    /// Purely linear pass for support analysis: normalization, ReLU and
    /// dropout are identities and max pooling becomes average pooling.
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Only convolution kernels receive L2 weight decay.
    pub fn decays(self) -> bool {
        self == ParamKind::ConvWeight
    }
}

/// A named tensor owned by a block; the gradient lives in the tensor's grad
/// buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    /// Logical dimensions (rank 4 for kernels, rank 1 for vectors).
    pub dims: Vec<usize>,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn vector(name: String, kind: ParamKind, len: usize, fill: T) -> Self {
        Self {
            name,
            kind,
            dims: vec![len],
            value: Tensor::full(Shape::new(len, 1, 1, 1), fill),
        }
    }

    fn kernel(name: String, cout: usize, cin: usize, kh: usize, kw: usize) -> Self {
        Self {
            name,
            kind: ParamKind::ConvWeight,
            dims: vec![cout, cin, kh, kw],
            value: Tensor::zeros(Shape::new(cout, cin, kh, kw)),
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Fan-in of a convolution kernel (`c_in·kh·kw`).
    pub fn fan_in(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub geom: ConvGeometry,
}

impl<T: Scalar> Conv<T> {
    pub fn new(name: &str, cin: usize, cout: usize, geom: ConvGeometry, bias: bool) -> Self {
        Self {
            weight: Param::kernel(format!("{name}.weight"), cout, cin, geom.kernel.0, geom.kernel.1),
            bias: bias.then(|| Param::vector(format!("{name}.bias"), ParamKind::Bias, cout, T::zero())),
            geom,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.data()), &self.geom)
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = ops::conv2d_backward(x, &self.weight.value, &self.geom, dy, self.bias.is_some())?;
        self.weight.value.accumulate_grad(&g.weight);
        if let (Some(b), Some(db)) = (self.bias.as_mut(), g.bias.as_ref()) {
            b.value.accumulate_grad(db);
        }
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Batch normalization followed by ReLU.
#[derive(Debug, Clone)]
pub struct BnRelu<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

#[derive(Debug, Clone)]
struct BnReluCache<T> {
    bn: Option<BnCache<T>>,
    pre: Tensor<T>,
}

type StatUpdate<T> = Option<(Vec<T>, Vec<T>)>;

impl<T: Scalar> BnRelu<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::vector(format!("{name}.gamma"), ParamKind::Gamma, channels, T::one()),
            beta: Param::vector(format!("{name}.beta"), ParamKind::Beta, channels, T::zero()),
            running_mean: Param::vector(format!("{name}.running_mean"), ParamKind::RunningMean, channels, T::zero()),
            running_var: Param::vector(format!("{name}.running_var"), ParamKind::RunningVar, channels, T::one()),
        }
    }

    fn run(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnReluCache<T>, StatUpdate<T>)> {
        if mode == Mode::Probe {
            return Ok((x.clone(), BnReluCache { bn: None, pre: x.clone() }, None));
        }
        let mut rm = self.running_mean.value.data().to_vec();
        let mut rv = self.running_var.value.data().to_vec();
        let norm_mode = if mode == Mode::Train { NormMode::Train } else { NormMode::Infer };
        let (pre, cache) = ops::batchnorm2d(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &mut rm,
            &mut rv,
            norm_mode,
            T::from_f64_lossy(BN_MOMENTUM),
            T::from_f64_lossy(BN_EPS),
        )?;
        let y = ops::relu(&pre);
        let stats = (mode == Mode::Train).then_some((rm, rv));
        Ok((y, BnReluCache { bn: Some(cache), pre }, stats))
    }

    fn commit(&mut self, stats: StatUpdate<T>) {
        if let Some((m, v)) = stats {
            self.running_mean.value.data_mut().copy_from_slice(&m);
            self.running_var.value.data_mut().copy_from_slice(&v);
        }
    }

    fn backward(&mut self, cache: &BnReluCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(bn) = cache.bn.as_ref() else {
            return Ok(dy.clone());
        };
        let d_pre = ops::relu_backward(&cache.pre, dy)?;
        let (dx, dg, db) = ops::batchnorm2d_backward(bn, self.gamma.value.data(), &d_pre)?;
        self.gamma.value.accumulate_grad(&dg);
        self.beta.value.accumulate_grad(&db);
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

fn channel_check<T: Scalar>(x: &Tensor<T>, expected: usize) -> Result<()> {
    if x.shape().c != expected {
        return Err(Error::Shape {
            axis: "input channels",
            expected,
            actual: x.shape().c,
        });
    }
    Ok(())
}

fn missing_cache() -> Error {
    Error::Invalid("backward called without a preceding forward".into())
}

/// Dense asymmetric-convolution unit. Appends `growth` channels computed by
/// `1×1 → (3×1, 1×3) → dilated (3×1, 1×3)`, each group followed by BN+ReLU,
/// with dropout last, to its unchanged input.
#[derive(Debug, Clone)]
pub struct EdaModule<T> {
    pub in_channels: usize,
    pub growth: usize,
    pub dilation: usize,
    pub dropout: f64,
    pub pointwise: Conv<T>,
    pub bn0: BnRelu<T>,
    pub conv_a_v: Conv<T>,
    pub conv_a_h: Conv<T>,
    pub bn1: BnRelu<T>,
    pub conv_b_v: Conv<T>,
    pub conv_b_h: Conv<T>,
    pub bn2: BnRelu<T>,
    cache: Option<EdaCache<T>>,
}

#[derive(Debug, Clone)]
struct EdaCache<T> {
    x: Tensor<T>,
    r0: Tensor<T>,
    a1: Tensor<T>,
    r1: Tensor<T>,
    a3: Tensor<T>,
    c0: BnReluCache<T>,
    c1: BnReluCache<T>,
    c2: BnReluCache<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> EdaModule<T> {
    pub fn new(name: &str, in_channels: usize, growth: usize, dilation: usize) -> Result<Self> {
        if in_channels == 0 || growth == 0 || dilation == 0 {
            return Err(Error::Invalid(format!(
                "EDA module {name}: channels, growth and dilation must be positive"
            )));
        }
        let k = growth;
        let v = |d| ConvGeometry::same((3, 1), (d, 1));
        let h = |d| ConvGeometry::same((1, 3), (1, d));
        Ok(Self {
            in_channels,
            growth,
            dilation,
            dropout: DEFAULT_DROPOUT,
            pointwise: Conv::new(&format!("{name}.conv1x1"), in_channels, k, ConvGeometry::pointwise(), false),
            bn0: BnRelu::new(&format!("{name}.bn0"), k),
            conv_a_v: Conv::new(&format!("{name}.conv3x1"), k, k, v(1)?, false),
            conv_a_h: Conv::new(&format!("{name}.conv1x3"), k, k, h(1)?, false),
            bn1: BnRelu::new(&format!("{name}.bn1"), k),
            conv_b_v: Conv::new(&format!("{name}.conv3x1_d"), k, k, v(dilation)?, false),
            conv_b_h: Conv::new(&format!("{name}.conv1x3_d"), k, k, h(dilation)?, false),
            bn2: BnRelu::new(&format!("{name}.bn2"), k),
            cache: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.growth
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, rng: &mut SplitMix64) -> Result<(Tensor<T>, EdaCache<T>, [StatUpdate<T>; 3])> {
        channel_check(x, self.in_channels)?;
        let a0 = self.pointwise.forward(x)?;
        let (r0, c0, s0) = self.bn0.run(&a0, mode)?;
        let a1 = self.conv_a_v.forward(&r0)?;
        let a2 = self.conv_a_h.forward(&a1)?;
        let (r1, c1, s1) = self.bn1.run(&a2, mode)?;
        let a3 = self.conv_b_v.forward(&r1)?;
        let a4 = self.conv_b_h.forward(&a3)?;
        let (r2, c2, s2) = self.bn2.run(&a4, mode)?;
        let (f, mask) = if mode == Mode::Train && self.dropout > 0.0 {
            let (f, m) = ops::dropout(&r2, self.dropout, rng)?;
            (f, Some(m))
        } else {
            (r2, None)
        };
        let y = ops::concat_channels(&[x, &f])?;
        let cache = EdaCache {
            x: x.clone(),
            r0,
            a1,
            r1,
            a3,
            c0,
            c1,
            c2,
            mask,
        };
        Ok((y, cache, [s0, s1, s2]))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut SplitMix64) -> Result<Tensor<T>> {
        let (y, cache, [s0, s1, s2]) = self.run(x, mode, rng)?;
        self.bn0.commit(s0);
        self.bn1.commit(s1);
        self.bn2.commit(s2);
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, Mode::Infer, &mut SplitMix64::new(0))?.0)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.cache.take().ok_or_else(missing_cache)?;
        let mut parts = ops::split_channels(dy, &[self.in_channels, self.growth])?;
        let d_f = parts.pop().expect("two parts");
        let mut dx = parts.pop().expect("two parts");
        let d_r2 = match &c.mask {
            Some(m) => ops::dropout_backward(m, &d_f),
            None => d_f,
        };
        let d_a4 = self.bn2.backward(&c.c2, &d_r2)?;
        let d_a3 = self.conv_b_h.backward(&c.a3, &d_a4)?;
        let d_r1 = self.conv_b_v.backward(&c.r1, &d_a3)?;
        let d_a2 = self.bn1.backward(&c.c1, &d_r1)?;
        let d_a1 = self.conv_a_h.backward(&c.a1, &d_a2)?;
        let d_r0 = self.conv_a_v.backward(&c.r0, &d_a1)?;
        let d_a0 = self.bn0.backward(&c.c0, &d_r0)?;
        let d_x = self.pointwise.backward(&c.x, &d_a0)?;
        dx.add_assign(&d_x)?;
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.pointwise.params();
        v.extend(self.bn0.params());
        v.extend(self.conv_a_v.params());
        v.extend(self.conv_a_h.params());
        v.extend(self.bn1.params());
        v.extend(self.conv_b_v.params());
        v.extend(self.conv_b_h.params());
        v.extend(self.bn2.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.pointwise.params_mut();
        v.extend(self.bn0.params_mut());
        v.extend(self.conv_a_v.params_mut());
        v.extend(self.conv_a_h.params_mut());
        v.extend(self.bn1.params_mut());
        v.extend(self.conv_b_v.params_mut());
        v.extend(self.conv_b_h.params_mut());
        v.extend(self.bn2.params_mut());
        v
    }
}

/// Stride-2 reduction. When widening, a `3×3/2` convolution producing
/// `out − in` channels is concatenated with a `2×2` max pool of the input;
/// otherwise the convolution alone produces all `out` channels. BN+ReLU
/// follows in both cases.
#[derive(Debug, Clone)]
pub struct Downsampler<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv: Conv<T>,
    pub bn: BnRelu<T>,
    cache: Option<DownCache<T>>,
}

#[derive(Debug, Clone)]
struct DownCache<T> {
    x: Tensor<T>,
    pool: Option<PoolCache>,
    bn: BnReluCache<T>,
}

#[derive(Debug, Clone)]
enum PoolCache {
    Max(Vec<u32>),
    Avg,
}

impl<T: Scalar> Downsampler<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Invalid(format!("downsampler {name}: channels must be positive")));
        }
        let filters = Self::conv_filters(in_channels, out_channels);
        let geom = ConvGeometry::new((3, 3), (2, 2), (1, 1), (1, 1))?;
        Ok(Self {
            in_channels,
            out_channels,
            conv: Conv::new(&format!("{name}.conv"), in_channels, filters, geom, false),
            bn: BnRelu::new(&format!("{name}.bn"), out_channels),
            cache: None,
        })
    }

    /// Number of convolution filters under the widening rule.
    pub fn conv_filters(in_channels: usize, out_channels: usize) -> usize {
        if out_channels > in_channels {
            out_channels - in_channels
        } else {
            out_channels
        }
    }

    pub fn has_pool_branch(&self) -> bool {
        self.out_channels > self.in_channels
    }

    fn run(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, DownCache<T>, StatUpdate<T>)> {
        channel_check(x, self.in_channels)?;
        let s = x.shape();
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::Geometry(format!(
                "downsampling block needs even spatial size, got {}x{}",
                s.h, s.w
            )));
        }
        let conv = self.conv.forward(x)?;
        let (merged, pool) = if self.has_pool_branch() {
            let (pooled, pc) = if mode == Mode::Probe {
                (ops::avgpool2d(x)?, PoolCache::Avg)
            } else {
                let (p, arg) = ops::maxpool2d(x)?;
                (p, PoolCache::Max(arg))
            };
            (ops::concat_channels(&[&conv, &pooled])?, Some(pc))
        } else {
            (conv, None)
        };
        let (y, bn, stats) = self.bn.run(&merged, mode)?;
        Ok((y, DownCache { x: x.clone(), pool, bn }, stats))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, cache, stats) = self.run(x, mode)?;
        self.bn.commit(stats);
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, Mode::Infer)?.0)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.cache.take().ok_or_else(missing_cache)?;
        let d_merged = self.bn.backward(&c.bn, dy)?;
        let filters = self.conv.weight.dims[0];
        match &c.pool {
            None => self.conv.backward(&c.x, &d_merged),
            Some(pool) => {
                let parts = ops::split_channels(&d_merged, &[filters, self.in_channels])?;
                let mut dx = self.conv.backward(&c.x, &parts[0])?;
                let d_pool = match pool {
                    PoolCache::Max(arg) => ops::maxpool2d_backward(c.x.shape(), arg, &parts[1])?,
                    PoolCache::Avg => ops::avgpool2d_backward(c.x.shape(), &parts[1])?,
                };
                dx.add_assign(&d_pool)?;
                Ok(dx)
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

/// `1×1` classifier with bias followed by bilinear upsampling.
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub conv: Conv<T>,
    pub factor: usize,
    cache: Option<(Tensor<T>, Shape)>,
}

impl<T: Scalar> Head<T> {
    pub fn new(name: &str, in_channels: usize, num_classes: usize, factor: usize) -> Result<Self> {
        if factor == 0 || num_classes == 0 || in_channels == 0 {
            return Err(Error::Invalid(format!("head {name}: sizes must be positive")));
        }
        Ok(Self {
            conv: Conv::new(&format!("{name}.conv"), in_channels, num_classes, ConvGeometry::pointwise(), true),
            factor,
            cache: None,
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        channel_check(x, self.conv.weight.dims[1])?;
        ops::upsample_bilinear(&self.conv.forward(x)?, self.factor)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        channel_check(x, self.conv.weight.dims[1])?;
        let z = self.conv.forward(x)?;
        let y = ops::upsample_bilinear(&z, self.factor)?;
        self.cache = Some((x.clone(), z.shape()));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, zs) = self.cache.take().ok_or_else(missing_cache)?;
        let dz = ops::upsample_bilinear_backward(dy, zs, self.factor)?;
        self.conv.backward(&x, &dz)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.conv.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.conv.params_mut()
    }
}
