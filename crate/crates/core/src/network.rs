//! Architecture specs bound to parameters: building, forward/backward
//! passes and prediction.

use crate::arch::{ArchitectureSpec, Stage};
use crate::error::{Error, Result};
use crate::layers::{Downsampler, EdaModule, Head, Mode, Param, ParamKind};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Downsample(Downsampler<T>),
    Eda(EdaModule<T>),
    Head(Head<T>),
}

impl<T: Scalar> Layer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Downsample(l) => l.params(),
            Layer::Eda(l) => l.params(),
            Layer::Head(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Downsample(l) => l.params_mut(),
            Layer::Eda(l) => l.params_mut(),
            Layer::Head(l) => l.params_mut(),
        }
    }
}

/// Standard deviation of the classifier kernel at initialization.
pub const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchitectureSpec,
    num_classes: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Allocates every layer with BN at its identity state and zero kernels.
    pub fn skeleton(spec: &ArchitectureSpec, num_classes: usize) -> Result<Self> {
        spec.validate()?;
        if num_classes < 2 {
            return Err(Error::Invalid(format!("num_classes must be at least 2, got {num_classes}")));
        }
        let plan = spec.channel_plan(num_classes);
        let mut layers = Vec::new();
        for (i, (stage, ch)) in spec.stages.iter().zip(&plan).enumerate() {
            let label = spec.stage_label(i);
            match stage {
                Stage::Downsample { out_channels } => {
                    layers.push(Layer::Downsample(Downsampler::new(&label, ch.input, *out_channels)?));
                }
                Stage::EdaBlock { growth, dilations, .. } => {
                    let mut c = ch.input;
                    for (j, &d) in dilations.iter().enumerate() {
                        layers.push(Layer::Eda(EdaModule::new(&format!("{label}.m{j}"), c, *growth, d)?));
                        c += growth;
                    }
                }
                Stage::Head { upsample_factor } => {
                    layers.push(Layer::Head(Head::new(&label, ch.input, num_classes, *upsample_factor)?));
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            num_classes,
            layers,
        })
    }

    /// Builds with kernels drawn from `N(0, 2/fan_in)` in parameter order,
    /// except the classifier kernel which uses `N(0, HEAD_INIT_STD²)` so the
    /// initial logits are near uniform.
    pub fn build(spec: &ArchitectureSpec, num_classes: usize, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(spec, num_classes)?;
        let mut rng = SplitMix64::new(seed);
        for p in net.params_mut() {
            if p.kind == ParamKind::ConvWeight {
                let std = if p.name == "head.conv.weight" {
                    HEAD_INIT_STD
                } else {
                    (2.0 / p.fan_in() as f64).sqrt()
                };
                for v in p.value.data_mut() {
                    *v = T::from_f64_lossy(std * rng.normal());
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// All named tensors, learnable and running statistics, in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Element count of learnable parameters.
    pub fn num_parameters(&self) -> usize {
        self.params().iter().filter(|p| p.kind.learnable()).map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.value.zero_grad();
        }
    }

    /// Input height and width must both be multiples of this.
    pub fn required_multiple(&self) -> usize {
        self.spec.downsample_factor()
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.spec.input_channels {
            return Err(Error::Shape {
                axis: "input channels",
                expected: self.spec.input_channels,
                actual: shape.c,
            });
        }
        let m = self.required_multiple();
        for (axis, v) in [("height", shape.h), ("width", shape.w)] {
            if v == 0 || v % m != 0 {
                return Err(Error::Geometry(format!(
                    "input {axis} {v} is not a multiple of {m} (required by {} downsampling stages)",
                    self.spec.downsample_count()
                )));
            }
        }
        Ok(())
    }

    /// Runs every layer before the head, caching activations for backward.
    pub fn forward_features(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut SplitMix64) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Downsample(l) => l.forward(&h, mode)?,
                Layer::Eda(l) => l.forward(&h, mode, rng)?,
                Layer::Head(_) => break,
            };
        }
        Ok(h)
    }

    /// Full forward pass producing logits at input resolution.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut SplitMix64) -> Result<Tensor<T>> {
        let features = self.forward_features(x, mode, rng)?;
        match self.layers.last_mut() {
            Some(Layer::Head(h)) => h.forward(&features),
            _ => unreachable!("validated specs end in a head"),
        }
    }

    /// Inference-mode logits without caching; usable through a shared reference.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Downsample(l) => l.infer(&h)?,
                Layer::Eda(l) => l.infer(&h)?,
                Layer::Head(l) => l.infer(&h)?,
            };
        }
        Ok(h)
    }

    /// Backpropagates from pre-head features; returns the input gradient.
    pub fn backward_features(&mut self, d_features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = d_features.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Downsample(l) => l.backward(&g)?,
                Layer::Eda(l) => l.backward(&g)?,
                Layer::Head(_) => continue,
            };
        }
        Ok(g)
    }

    /// Backpropagates from logits, accumulating parameter gradients.
    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let d_features = match self.layers.last_mut() {
            Some(Layer::Head(h)) => h.backward(d_logits)?,
            _ => unreachable!("validated specs end in a head"),
        };
        self.backward_features(&d_features)
    }

    /// Per-pixel argmax class (lowest index wins ties), `(n, h, w)` order.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<u8>> {
        Ok(argmax_classes(&self.infer(x)?))
    }
}

/// Per-pixel argmax over the channel axis; ties resolve to the lowest index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let x = logits.sample(n);
        for p in 0..plane {
            let mut best = 0;
            for k in 1..s.c {
                if x[k * plane + p] > x[best * plane + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}
