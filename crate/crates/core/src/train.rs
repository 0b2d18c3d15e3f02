//! Training recipe: Adam with coupled L2 decay, poly learning-rate decay,
//! flip/translate augmentation and class-weighted cross-entropy.

use std::io::Write;

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::metrics::{confusion_update, ConfusionMatrix};
use crate::network::Network;
use crate::ops::softmax_cross_entropy;
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;
use crate::synth::{Sample, NUM_CLASSES};
use crate::tensor::{Shape, Tensor};

/// `base·(1 − iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base_lr: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::Invalid(format!(
            "poly_lr: iteration {iter} outside 0..={max_iter}"
        )));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self { step: 0, first, second }
    }

    pub fn for_params(params: &[&mut Param<T>]) -> Self {
        Self::new(params.iter().map(|p| p.numel()))
    }
}

/// One Adam update of a flat buffer. `t` is the 1-based step number.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    theta: &mut [T],
    grad: Option<&[T]>,
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
    decay: bool,
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t as i32));
    let eps = T::from_f64_lossy(cfg.eps);
    let lr = T::from_f64_lossy(lr);
    let wd = T::from_f64_lossy(if decay { cfg.weight_decay } else { 0.0 });
    let one = T::one();
    for i in 0..theta.len() {
        let g = grad.map_or(T::zero(), |g| g[i]) + wd * theta[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        theta[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Applies Adam to every learnable parameter using its grad buffer.
/// Running statistics are skipped; only kernels receive weight decay.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Param<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::Shape {
            axis: "optimizer parameter count",
            expected: state.first.len(),
            actual: params.len(),
        });
    }
    state.step += 1;
    for (i, p) in params.iter_mut().enumerate() {
        if state.first[i].len() != p.numel() {
            return Err(Error::Shape {
                axis: "optimizer moment length",
                expected: state.first[i].len(),
                actual: p.numel(),
            });
        }
        if !p.kind.learnable() {
            continue;
        }
        let decay = p.kind.decays();
        let grad = p.value.grad().map(|g| g.to_vec());
        adam_update(
            p.value.data_mut(),
            grad.as_deref(),
            &mut state.first[i],
            &mut state.second[i],
            state.step,
            lr,
            cfg,
            decay,
        );
    }
    Ok(())
}

/// Mirrors a sample left to right.
pub fn flip_horizontal(s: &Sample) -> Sample {
    let (w, h) = (s.width, s.height);
    let mut out = s.clone();
    for y in 0..h {
        for x in 0..w {
            let (src, dst) = (y * w + x, y * w + (w - 1 - x));
            out.label[dst] = s.label[src];
            out.image[3 * dst..3 * dst + 3].copy_from_slice(&s.image[3 * src..3 * src + 3]);
        }
    }
    out
}

/// Moves content by `(dx, dy)`; vacated pixels become black / class 0.
pub fn translate(s: &Sample, dx: i64, dy: i64) -> Sample {
    let (w, h) = (s.width as i64, s.height as i64);
    let mut out = Sample {
        image: vec![0; s.image.len()],
        label: vec![0; s.label.len()],
        ..s.clone()
    };
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if !(0..w).contains(&sx) {
                continue;
            }
            let (src, dst) = ((sy * w + sx) as usize, (y * w + x) as usize);
            out.label[dst] = s.label[src];
            out.image[3 * dst..3 * dst + 3].copy_from_slice(&s.image[3 * src..3 * src + 3]);
        }
    }
    out
}

/// Flip with probability 1/2, then shift by independent offsets in
/// `-2..=2` along x and then y.
pub fn augment_sample(s: &Sample, rng: &mut SplitMix64) -> Sample {
    let flipped = if rng.coin(0.5) { flip_horizontal(s) } else { s.clone() };
    let dx = rng.range_inclusive(-2, 2);
    let dy = rng.range_inclusive(-2, 2);
    translate(&flipped, dx, dy)
}

/// `1/ln(1.02 + p_c)` from pixel frequencies; class 0 gets weight 0.
pub fn class_weights(samples: &[Sample]) -> Result<[f64; NUM_CLASSES]> {
    let mut counts = [0u64; NUM_CLASSES];
    for s in samples {
        for &v in &s.label {
            counts[v as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Dataset("class weights need a non-empty dataset".into()));
    }
    Ok(weights_from_frequencies(counts.map(|c| c as f64 / total as f64)))
}

pub fn weights_from_frequencies(p: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mut w = p.map(|p| 1.0 / (1.02 + p).ln());
    w[0] = 0.0;
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchitectureSpec,
    pub base_lr: f64,
    pub power: f64,
    pub batch_size: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// Desk-scale defaults: batch 8, 3000 iterations, class weighting on.
    pub fn new(arch: ArchitectureSpec) -> Self {
        Self {
            arch,
            base_lr: 5e-4,
            power: 0.9,
            batch_size: 8,
            max_iter: 3000,
            seed: 0,
            class_weighting: true,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("max_iter and batch_size must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.power >= 0.0) {
            return Err(Error::Invalid("learning rate and power must be non-negative".into()));
        }
        self.arch.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Writes the log as tab-separated `iter lr loss` lines.
pub fn write_log(out: &mut impl Write, log: &[LogEntry]) -> std::io::Result<()> {
    for e in log {
        writeln!(out, "{}\t{:e}\t{}", e.iter, e.lr, e.loss)?;
    }
    Ok(())
}

/// Trailing moving average over `window` entries ending at `iter`.
pub fn smoothed_loss(log: &[LogEntry], iter: usize, window: usize) -> Option<f64> {
    let end = log.iter().position(|e| e.iter == iter)? + 1;
    let start = end.saturating_sub(window.max(1));
    let slice = &log[start..end];
    Some(slice.iter().map(|e| e.loss).sum::<f64>() / slice.len() as f64)
}

/// Stacks samples into a `(n, 3, h, w)` batch and a flat label vector.
pub fn batch_tensor(samples: &[&Sample]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(samples.len() * 3 * w * h);
    let mut labels = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.width, s.height) != (w, h) {
            return Err(Error::Dataset(format!(
                "batch mixes sizes {w}x{h} and {}x{}",
                s.width, s.height
            )));
        }
        data.extend(s.image_planar());
        labels.extend_from_slice(&s.label);
    }
    Ok((Tensor::from_vec(Shape::new(samples.len(), 3, h, w), data)?, labels))
}

/// Epoch-wise shuffled index stream.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: SplitMix64,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: 0,
            rng: SplitMix64::new(seed),
        };
        s.rng.shuffle(&mut s.order);
        s
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub log: Vec<LogEntry>,
}

/// Trains a fresh network. Initialization, batch order, augmentation and
/// dropout draw from separate streams derived from `config.seed`.
/// `on_iter` sees every log entry as it is produced.
pub fn train_loop(
    config: &TrainConfig,
    data: &[Sample],
    mut on_iter: impl FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut net = Network::<f32>::build(&config.arch, NUM_CLASSES, derive_seed(config.seed, 0))?;
    let weights: Option<Vec<f32>> = if config.class_weighting {
        Some(class_weights(data)?.iter().map(|&w| w as f32).collect())
    } else {
        None
    };
    let mut sampler = BatchSampler::new(data.len(), derive_seed(config.seed, 1));
    let mut aug_rng = SplitMix64::new(derive_seed(config.seed, 2));
    let mut drop_rng = SplitMix64::new(derive_seed(config.seed, 3));
    let mut state = AdamState::for_params(&net.params_mut());
    let mut log = Vec::with_capacity(config.max_iter);

    for iter in 0..config.max_iter {
        let batch: Vec<Sample> = (0..config.batch_size)
            .map(|_| augment_sample(&data[sampler.next()], &mut aug_rng))
            .collect();
        let (x, labels) = batch_tensor(&batch.iter().collect::<Vec<_>>())?;
        net.zero_grad();
        let logits = net.forward(&x, Mode::Train, &mut drop_rng)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, &labels, weights.as_deref(), Some(0))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        net.backward(&d_logits)?;
        let lr = poly_lr(iter, config.max_iter, config.base_lr, config.power)?;
        adam_step(&mut net.params_mut(), &mut state, lr, &config.adam)?;
        let entry = LogEntry {
            iter,
            lr,
            loss: loss as f64,
        };
        on_iter(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { network: net, log })
}

/// Confusion matrix of inference-mode predictions over a dataset.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &[Sample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new();
    for s in data {
        let (x, labels) = batch_tensor(&[s])?;
        let pred = net.predict(&x.cast::<T>())?;
        confusion_update(&mut cm, &pred, &labels)?;
    }
    Ok(cm)
}
