//! Independent oracles and generators shared by the integration tests.

#![allow(dead_code)]

pub mod grad_suite;

use std::collections::HashSet;

use edaseg::arch::{ArchitectureSpec, Stage};
use edaseg::ops::ConvGeometry;
use edaseg::{Shape, SplitMix64, Tensor};

pub fn random_tensor(shape: Shape, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

/// Direct summation over every output position and kernel tap.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    let s = x.shape();
    let ws = w.shape();
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (dh, dw) = g.dilation;
    let (ph, pw) = g.padding;
    let ho = (s.h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
    let wo = (s.w + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
    let mut out = Vec::with_capacity(s.n * ws.n * ho * wo);
    for n in 0..s.n {
        for co in 0..ws.n {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..s.c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * sh + u * dh) as i64 - ph as i64;
                                let xx = (j * sw + v * dw) as i64 - pw as i64;
                                if y < 0 || xx < 0 || y >= s.h as i64 || xx >= s.w as i64 {
                                    continue;
                                }
                                acc += w.at(co, ci, u, v) * x.at(n, ci, y as usize, xx as usize);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// IoU per class 1..=5 from explicit pixel sets; `None` when both sets are
/// empty. Pixels whose truth is 0 are dropped first.
pub fn brute_force_miou(pred: &[u8], truth: &[u8]) -> Option<f64> {
    let mut ious = Vec::new();
    for c in 1..6u8 {
        let t: HashSet<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        let p: HashSet<usize> = (0..pred.len()).filter(|&i| truth[i] != 0 && pred[i] == c).collect();
        let union = t.union(&p).count();
        if union > 0 {
            ious.push(t.intersection(&p).count() as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// A valid spec with 1..=`max_body` body stages, small widths and a head
/// that restores full resolution.
pub fn random_spec(rng: &mut SplitMix64, max_body: usize) -> ArchitectureSpec {
    let body = rng.range_inclusive(1, max_body as i64) as usize;
    let mut stages = Vec::with_capacity(body + 1);
    let mut downs = 0u32;
    for i in 0..body {
        if rng.coin(0.4) && downs < 3 {
            stages.push(Stage::Downsample {
                out_channels: rng.range_inclusive(2, 12) as usize,
            });
            downs += 1;
        } else {
            let modules = rng.range_inclusive(1, 3) as usize;
            stages.push(Stage::EdaBlock {
                name: format!("b{i}"),
                growth: rng.range_inclusive(1, 4) as usize,
                dilations: (0..modules).map(|_| 1 << rng.below(3)).collect(),
            });
        }
    }
    stages.push(Stage::Head {
        upsample_factor: 1 << downs,
    });
    let spec = ArchitectureSpec {
        name: format!("random-{}", rng.next_u64() % 10_000),
        input_channels: rng.range_inclusive(1, 4) as usize,
        stages,
    };
    spec.validate().expect("generator emits valid specs");
    spec
}
