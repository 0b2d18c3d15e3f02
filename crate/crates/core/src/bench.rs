//! Single-threaded inference latency measurement.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub arch: String,
    pub height: usize,
    pub width: usize,
    pub runs: usize,
    pub warmup: usize,
    pub times_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
}

impl BenchReport {
    fn from_times(arch: &str, height: usize, width: usize, warmup: usize, times_ms: Vec<f64>) -> Self {
        let n = times_ms.len() as f64;
        let mean = times_ms.iter().sum::<f64>() / n;
        let var = times_ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = times_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        Self {
            arch: arch.to_string(),
            height,
            width,
            runs: times_ms.len(),
            warmup,
            times_ms,
            mean_ms: mean,
            median_ms: median,
            std_ms: var.sqrt(),
        }
    }
}

/// Times `runs` batch-1 inference passes on a fixed uniform random input
/// after `warmup` untimed passes.
pub fn benchmark_inference(
    net: &Network<f32>,
    height: usize,
    width: usize,
    runs: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::Invalid("benchmark needs at least one timed run".into()));
    }
    let shape = Shape::new(1, net.spec().input_channels, height, width);
    net.check_input(shape)?;
    let mut rng = SplitMix64::new(0x5eed);
    let x = Tensor::from_fn(shape, |_| rng.next_f64() as f32);
    for _ in 0..warmup {
        std::hint::black_box(net.infer(&x)?);
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        std::hint::black_box(net.infer(&x)?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport::from_times(&net.spec().name, height, width, warmup, times))
}
