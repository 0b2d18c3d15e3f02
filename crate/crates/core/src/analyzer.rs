//! Static cost and receptive-field analysis of architecture specs, plus an
//! empirical receptive-field probe that measures gradient support on a
//! concrete network.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Stage};
use crate::error::{Error, Result};
use crate::layers::{Downsampler, Mode, ParamKind};
use crate::network::Network;
use crate::ops::{self, ConvGeometry};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

/// One row of an analysis: a stage's output geometry and cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub stage: String,
    /// `(channels, height, width)` after the stage.
    pub output: (usize, usize, usize),
    /// Input size divided by this stage's output size.
    pub downsample: usize,
    pub params: u64,
    pub macs: u64,
    pub rf: (usize, usize),
    pub jump: (usize, usize),
}

/// Whole-network analysis at one input size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analysis {
    pub arch: String,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub total_params: u64,
    /// Multiply-accumulates (one MAC = one multiply plus one add).
    pub total_macs: u64,
    pub stages: Vec<LayerReport>,
}

/// Receptive-field state along one axis: extent and cumulative stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfAxis {
    pub rf: usize,
    pub jump: usize,
}

impl Default for RfAxis {
    fn default() -> Self {
        Self { rf: 1, jump: 1 }
    }
}

impl RfAxis {
    /// `r ← r + d·(k−1)·j`, then `j ← j·s`.
    pub fn apply(self, kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            rf: self.rf + dilation * (kernel - 1) * self.jump,
            jump: self.jump * stride,
        }
    }
}

/// A plain layer for chain-level receptive-field work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainLayer {
    Conv {
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
    },
    /// 2×2 stride-2 pooling.
    Pool,
}

impl ChainLayer {
    pub fn conv3(dilation: usize) -> Self {
        ChainLayer::Conv {
            kernel: (3, 3),
            stride: (1, 1),
            dilation: (dilation, dilation),
        }
    }

    fn step(self, (h, w): (RfAxis, RfAxis)) -> (RfAxis, RfAxis) {
        match self {
            ChainLayer::Conv { kernel, stride, dilation } => (
                h.apply(kernel.0, stride.0, dilation.0),
                w.apply(kernel.1, stride.1, dilation.1),
            ),
            ChainLayer::Pool => (h.apply(2, 2, 1), w.apply(2, 2, 1)),
        }
    }
}

/// Receptive field `(rf_h, rf_w)` of a layer chain.
pub fn chain_receptive_field(layers: &[ChainLayer]) -> (usize, usize) {
    let (h, w) = layers.iter().fold((RfAxis::default(), RfAxis::default()), |acc, l| l.step(acc));
    (h.rf, w.rf)
}

/// EDA module along one axis: the dense output is the union of the
/// passthrough and the `3·3(d)` conv stack, so the stack dominates.
fn eda_axis(a: RfAxis, dilation: usize) -> RfAxis {
    a.apply(1, 1, 1).apply(3, 1, 1).apply(3, 1, dilation)
}

/// Downsampler along one axis: max of the 3×3/2 conv and 2×2/2 pool branches.
fn downsample_axis(a: RfAxis) -> RfAxis {
    let conv = a.apply(3, 2, 1);
    let pool = a.apply(2, 2, 1);
    RfAxis {
        rf: conv.rf.max(pool.rf),
        jump: conv.jump,
    }
}

/// Receptive field `(rf_h, rf_w)` after every stage. The head row repeats
/// the pre-head value (1×1 conv, then resampling).
pub fn receptive_field(spec: &ArchitectureSpec) -> Vec<(usize, usize)> {
    rf_trace(spec).into_iter().map(|(h, w)| (h.rf, w.rf)).collect()
}

fn rf_trace(spec: &ArchitectureSpec) -> Vec<(RfAxis, RfAxis)> {
    let mut state = (RfAxis::default(), RfAxis::default());
    spec.stages
        .iter()
        .map(|stage| {
            state = match stage {
                Stage::Downsample { .. } => (downsample_axis(state.0), downsample_axis(state.1)),
                Stage::EdaBlock { dilations, .. } => dilations
                    .iter()
                    .fold(state, |(h, w), &d| (eda_axis(h, d), eda_axis(w, d))),
                Stage::Head { .. } => state,
            };
            state
        })
        .collect()
}

/// Receptive field of the feature map entering the head.
pub fn pre_head_receptive_field(spec: &ArchitectureSpec) -> (usize, usize) {
    let rf = receptive_field(spec);
    rf.get(rf.len().wrapping_sub(2)).copied().unwrap_or((1, 1))
}

fn eda_module_params(cin: u64, k: u64) -> u64 {
    cin * k + 4 * 3 * k * k + 3 * 2 * k
}

fn eda_module_macs(cin: u64, k: u64, hw: u64) -> u64 {
    let convs = hw * k * cin + 4 * hw * k * k * 3;
    let bn_relu = 3 * 2 * hw * k;
    convs + bn_relu
}

/// Learnable parameter count: kernels, head bias, BN gamma and beta.
/// Running statistics are state, not parameters.
pub fn count_params(spec: &ArchitectureSpec, num_classes: usize) -> u64 {
    let plan = spec.channel_plan(num_classes);
    spec.stages
        .iter()
        .zip(&plan)
        .map(|(stage, ch)| stage_params(stage, ch.input as u64, num_classes as u64))
        .sum()
}

fn stage_params(stage: &Stage, cin: u64, classes: u64) -> u64 {
    match stage {
        Stage::Downsample { out_channels } => {
            let cout = *out_channels as u64;
            let filters = Downsampler::<f32>::conv_filters(cin as usize, cout as usize) as u64;
            filters * cin * 9 + 2 * cout
        }
        Stage::EdaBlock { growth, dilations, .. } => {
            let k = *growth as u64;
            (0..dilations.len() as u64).map(|j| eda_module_params(cin + j * k, k)).sum()
        }
        Stage::Head { .. } => cin * classes + classes,
    }
}

fn check_divisible(spec: &ArchitectureSpec, h: usize, w: usize) -> Result<()> {
    let m = spec.downsample_factor();
    for (axis, v) in [("height", h), ("width", w)] {
        if v == 0 || v % m != 0 {
            return Err(Error::Geometry(format!(
                "input {axis} {v} is not a multiple of {m} (required by {} downsampling stages)",
                spec.downsample_count()
            )));
        }
    }
    Ok(())
}

/// Multiply-accumulate count at input `h × w`. Convolutions cost
/// `Ho·Wo·Cout·Cin·kh·kw`; BN and ReLU cost one per output element each;
/// bilinear upsampling costs 4 per output element; pooling, concatenation
/// and dropout are free.
pub fn count_macs(spec: &ArchitectureSpec, num_classes: usize, h: usize, w: usize) -> Result<u64> {
    Ok(analyze(spec, num_classes, h, w)?.total_macs)
}

/// Full per-stage report at input `h × w`.
pub fn analyze(spec: &ArchitectureSpec, num_classes: usize, h: usize, w: usize) -> Result<Analysis> {
    spec.validate()?;
    check_divisible(spec, h, w)?;
    let plan = spec.channel_plan(num_classes);
    let rfs = rf_trace(spec);
    let classes = num_classes as u64;
    let (mut ch, mut cw, mut factor) = (h, w, 1usize);
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (i, (stage, io)) in spec.stages.iter().zip(&plan).enumerate() {
        let cin = io.input as u64;
        let macs = match stage {
            Stage::Downsample { out_channels } => {
                ch /= 2;
                cw /= 2;
                factor *= 2;
                let hw = (ch * cw) as u64;
                let cout = *out_channels as u64;
                let filters = Downsampler::<f32>::conv_filters(io.input, *out_channels) as u64;
                hw * filters * cin * 9 + 2 * hw * cout
            }
            Stage::EdaBlock { growth, dilations, .. } => {
                let hw = (ch * cw) as u64;
                let k = *growth as u64;
                (0..dilations.len() as u64).map(|j| eda_module_macs(cin + j * k, k, hw)).sum()
            }
            Stage::Head { upsample_factor } => {
                let conv = (ch * cw) as u64 * classes * cin;
                ch *= upsample_factor;
                cw *= upsample_factor;
                factor /= upsample_factor;
                conv + 4 * classes * (ch * cw) as u64
            }
        };
        let (rh, rw) = rfs[i];
        let jump = match stage {
            Stage::Head { upsample_factor } => (rh.jump / upsample_factor, rw.jump / upsample_factor),
            _ => (rh.jump, rw.jump),
        };
        stages.push(LayerReport {
            stage: spec.stage_label(i),
            output: (io.output, ch, cw),
            downsample: factor,
            params: stage_params(stage, cin, classes),
            macs,
            rf: (rh.rf, rw.rf),
            jump,
        });
    }
    Ok(Analysis {
        arch: spec.name.clone(),
        height: h,
        width: w,
        num_classes,
        total_params: stages.iter().map(|s| s.params).sum(),
        total_macs: stages.iter().map(|s| s.macs).sum(),
        stages,
    })
}

/// Per-stage output shapes at input `h × w`.
pub fn shape_trace(spec: &ArchitectureSpec, h: usize, w: usize) -> Result<Vec<LayerReport>> {
    Ok(analyze(spec, 2, h, w)?.stages)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

fn ratio(f: usize) -> String {
    if f == 1 {
        "1/1".into()
    } else {
        format!("1/{f}")
    }
}

const TEXT_HEADER: &str = "stage          output(CxHxW)      ratio       params     MACs(mult-acc)   rf_h   rf_w  jump";

fn text_row(r: &LayerReport) -> String {
    format!(
        "{:<14} {:<18} {:>5} {:>12} {:>18} {:>6} {:>6} {:>5}",
        r.stage,
        format!("{}x{}x{}", r.output.0, r.output.1, r.output.2),
        ratio(r.downsample),
        r.params,
        r.macs,
        r.rf.0,
        r.rf.1,
        r.jump.0
    )
}

/// Header plus one line per stage (text), or a JSON array of rows.
pub fn render_report(reports: &[LayerReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => {
            let mut lines = vec![TEXT_HEADER.to_string()];
            lines.extend(reports.iter().map(text_row));
            lines.join("\n")
        }
        ReportFormat::Json => serde_json::to_string_pretty(reports).expect("reports serialize"),
    }
}

pub fn parse_report_json(text: &str) -> Result<Vec<LayerReport>> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Row-aligned comparison of two reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiff {
    pub index: usize,
    pub left: Option<LayerReport>,
    pub right: Option<LayerReport>,
    pub changed: bool,
}

pub fn diff_reports(left: &[LayerReport], right: &[LayerReport]) -> Vec<RowDiff> {
    (0..left.len().max(right.len()))
        .map(|i| {
            let (l, r) = (left.get(i).cloned(), right.get(i).cloned());
            RowDiff {
                index: i,
                changed: l != r,
                left: l,
                right: r,
            }
        })
        .collect()
}

/// Marks changed rows with `*` and ends with the total deltas.
pub fn render_diff(a: &Analysis, b: &Analysis) -> String {
    let mut out = vec![format!("  {} vs {}", a.arch, b.arch), format!("  {TEXT_HEADER}")];
    for d in diff_reports(&a.stages, &b.stages) {
        let mark = if d.changed { "*" } else { " " };
        match (&d.left, &d.right) {
            (Some(l), Some(r)) if !d.changed => out.push(format!("{mark} {}", text_row(l))),
            _ => {
                for (side, row) in [("<", &d.left), (">", &d.right)] {
                    if let Some(row) = row {
                        out.push(format!("{mark}{side}{}", text_row(row)));
                    }
                }
            }
        }
    }
    out.push(format!(
        "params delta: {}  MACs delta: {}",
        b.total_params as i128 - a.total_params as i128,
        b.total_macs as i128 - a.total_macs as i128
    ));
    out.join("\n")
}

fn support_extent(grad: &Tensor<f64>) -> Result<(usize, usize)> {
    let s = grad.shape();
    let (mut hmin, mut hmax, mut wmin, mut wmax) = (usize::MAX, 0, usize::MAX, 0);
    for c in 0..s.c {
        let plane = grad.plane(0, c);
        for i in 0..s.h {
            for j in 0..s.w {
                if plane[i * s.w + j] != 0.0 {
                    hmin = hmin.min(i);
                    hmax = hmax.max(i);
                    wmin = wmin.min(j);
                    wmax = wmax.max(j);
                }
            }
        }
    }
    if hmin == usize::MAX {
        return Err(Error::Invalid("probe produced no gradient support".into()));
    }
    if hmin == 0 || wmin == 0 || hmax + 1 == s.h || wmax + 1 == s.w {
        return Err(Error::Invalid(format!(
            "probe {}x{} too small: gradient support reaches the border",
            s.h, s.w
        )));
    }
    Ok((hmax - hmin + 1, wmax - wmin + 1))
}

fn require_probe_fits(predicted: (usize, usize), probe: (usize, usize)) -> Result<()> {
    if predicted.0 >= probe.0 || predicted.1 >= probe.1 {
        return Err(Error::Invalid(format!(
            "probe {}x{} too small for predicted receptive field {}x{}",
            probe.0, probe.1, predicted.0, predicted.1
        )));
    }
    Ok(())
}

/// Measures the pre-head receptive field as the bounding box of nonzero
/// input gradient for the centre feature pixel. Kernels are set to the
/// positive constant `1/fan_in` and the network runs in [`Mode::Probe`], so
/// no contribution can cancel.
pub fn measure_rf_empirical(spec: &ArchitectureSpec, num_classes: usize, probe: (usize, usize)) -> Result<(usize, usize)> {
    require_probe_fits(pre_head_receptive_field(spec), probe)?;
    let mut net = Network::<f64>::skeleton(spec, num_classes)?;
    for p in net.params_mut() {
        if p.kind == ParamKind::ConvWeight {
            let v = 1.0 / p.fan_in() as f64;
            p.value.data_mut().iter_mut().for_each(|x| *x = v);
        }
    }
    let x = Tensor::full(Shape::new(1, spec.input_channels, probe.0, probe.1), 1.0);
    let mut rng = SplitMix64::new(0);
    let features = net.forward_features(&x, Mode::Probe, &mut rng)?;
    let fs = features.shape();
    let mut seed = Tensor::zeros(fs);
    for c in 0..fs.c {
        seed.plane_mut(0, c)[(fs.h / 2) * fs.w + fs.w / 2] = 1.0;
    }
    support_extent(&net.backward_features(&seed)?)
}

/// Same measurement for a single-channel layer chain with unit kernels.
pub fn measure_rf_chain(layers: &[ChainLayer], probe: (usize, usize)) -> Result<(usize, usize)> {
    require_probe_fits(chain_receptive_field(layers), probe)?;
    enum Saved {
        Conv(Tensor<f64>, Tensor<f64>, ConvGeometry),
        Pool(Shape),
    }
    let mut h = Tensor::full(Shape::new(1, 1, probe.0, probe.1), 1.0);
    let mut saved = Vec::new();
    for layer in layers {
        match *layer {
            ChainLayer::Conv { kernel, stride, dilation } => {
                let pad = (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2);
                let g = ConvGeometry::new(kernel, stride, dilation, pad)?;
                let w = Tensor::full(Shape::new(1, 1, kernel.0, kernel.1), 1.0);
                let y = ops::conv2d(&h, &w, None, &g)?;
                saved.push(Saved::Conv(h, w, g));
                h = y;
            }
            ChainLayer::Pool => {
                let y = ops::avgpool2d(&h)?;
                saved.push(Saved::Pool(h.shape()));
                h = y;
            }
        }
    }
    let s = h.shape();
    let mut g = Tensor::zeros(s);
    g.data_mut()[(s.h / 2) * s.w + s.w / 2] = 1.0;
    for item in saved.iter().rev() {
        g = match item {
            Saved::Conv(x, w, geom) => ops::conv2d_backward(x, w, geom, &g, false)?.input,
            Saved::Pool(shape) => ops::avgpool2d_backward(*shape, &g)?,
        };
    }
    support_extent(&g)
}
