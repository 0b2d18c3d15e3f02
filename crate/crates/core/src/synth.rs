//! Procedural perspective road scenes with pixel-exact six-class labels,
//! plus PPM/PGM dataset I/O and prediction rendering.
//!
//! Scene randomness is drawn from one [`SplitMix64`] stream per sample in
//! this order: horizon row, vanishing-point column, left and right road
//! edges, lane count, lane classes, per-lane bottom offsets, dash phase,
//! sky/terrain/road shades, brightness gain, then one noise word per image
//! channel in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const NUM_CLASSES: usize = 6;

/// Fixed class meanings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ClassId {
    Undefined = 0,
    Road = 1,
    /// Double solid yellow.
    DoubleSolidYellow = 2,
    /// Single dashed yellow.
    SingleDashedYellow = 3,
    /// Single solid red.
    SingleSolidRed = 4,
    /// Single solid white.
    SingleSolidWhite = 5,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [
        ClassId::Undefined,
        ClassId::Road,
        ClassId::DoubleSolidYellow,
        ClassId::SingleDashedYellow,
        ClassId::SingleSolidRed,
        ClassId::SingleSolidWhite,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ClassId::Undefined => "undefined",
            ClassId::Road => "road",
            ClassId::DoubleSolidYellow => "DS-Y",
            ClassId::SingleDashedYellow => "SD-Y",
            ClassId::SingleSolidRed => "SS-R",
            ClassId::SingleSolidWhite => "SS-W",
        }
    }

    pub fn color(self) -> [u8; 3] {
        COLORMAP[self as usize]
    }
}

/// Rendering colour per class; lane markings are painted in these colours.
pub const COLORMAP: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [128, 64, 128],
    [255, 200, 0],
    [255, 255, 0],
    [255, 0, 0],
    [255, 255, 255],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_lanes: usize,
    pub max_lanes: usize,
    /// Dash cycle length in inverse-depth units (1 at the bottom row).
    pub dash_period: f64,
    /// Fraction of each dash cycle that is painted.
    pub dash_duty: f64,
    /// Marking width in pixels at the bottom row.
    pub lane_width: f64,
    /// Mean horizon position as a fraction of the height.
    pub horizon: f64,
    pub horizon_jitter: f64,
    /// Additive per-channel noise amplitude on the 0..1 scale.
    pub noise: f64,
    /// Global brightness gain range.
    pub brightness: (f64, f64),
}

impl SceneConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            min_lanes: 2,
            max_lanes: 5,
            dash_period: 0.5,
            dash_duty: 0.5,
            lane_width: (width as f64 / 24.0).max(1.0),
            horizon: 0.4,
            horizon_jitter: 0.05,
            noise: 0.05,
            brightness: (0.85, 1.1),
        }
    }

    /// 144×96 training scale.
    pub fn desk() -> Self {
        Self::with_size(144, 96)
    }

    /// 720×480, the full camera resolution.
    pub fn full() -> Self {
        Self::with_size(720, 480)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("scene config: {m}")));
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return bad(format!("size {}x{} must be positive multiples of 8", self.width, self.height));
        }
        if self.min_lanes < 2 || self.max_lanes > 5 || self.min_lanes > self.max_lanes {
            return bad(format!("lane count range {}..={} must lie within 2..=5", self.min_lanes, self.max_lanes));
        }
        if !(self.dash_period > 0.0) || !(0.0 < self.dash_duty && self.dash_duty < 1.0) {
            return bad("dash period must be positive and duty in (0, 1)".into());
        }
        if !(self.lane_width >= 1.0) {
            return bad("lane width must be at least 1 px".into());
        }
        if !(0.1..=0.8).contains(&self.horizon) || !(0.0..0.1).contains(&self.horizon_jitter) {
            return bad("horizon must lie in [0.1, 0.8] with jitter below 0.1".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad("noise amplitude must lie in [0, 0.5)".into());
        }
        let (lo, hi) = self.brightness;
        if !(lo > 0.0 && lo <= hi) {
            return bad("brightness range must be positive and ordered".into());
        }
        Ok(())
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One image/label pair. `image` is interleaved 8-bit RGB in row-major
/// order; `label` holds one class id per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    pub image: Vec<u8>,
    pub label: Vec<u8>,
    pub seed: u64,
}

impl Sample {
    /// Planar `(3, h, w)` floats in `[0, 1]`.
    pub fn image_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; 3 * plane];
        for (p, px) in self.image.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f32 / 255.0;
            }
        }
        out
    }
}

/// Noise-free scene: image colours taken directly from the palette.
#[derive(Debug, Clone)]
pub struct CleanScene {
    pub image: Vec<u8>,
    pub label: Vec<u8>,
    /// Brightness gain and noise stream state for the photometric pass.
    gain: f64,
    rng: SplitMix64,
}

#[derive(Debug, Clone, Copy)]
struct LaneLine {
    class: ClassId,
    bottom_x: f64,
}

fn shade(rng: &mut SplitMix64, base: [u8; 3], spread: f64) -> [u8; 3] {
    let f = rng.uniform(1.0 - spread, 1.0 + spread);
    base.map(|c| (c as f64 * f).round().clamp(0.0, 254.0) as u8)
}

/// Half-open pixel span `[lo, hi)` covering centre `x` with width `w`,
/// never narrower than one pixel.
fn span(x: f64, w: f64) -> (i64, i64) {
    let lo = (x - w / 2.0).round() as i64;
    let hi = ((x + w / 2.0).round() as i64).max(lo + 1);
    (lo, hi)
}

/// Lays out the scene geometry and paints palette colours and labels.
pub fn render_clean(seed: u64, cfg: &SceneConfig) -> Result<CleanScene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);
    let mut rng = SplitMix64::new(seed);

    let horizon = ((cfg.horizon + rng.uniform(-cfg.horizon_jitter, cfg.horizon_jitter)) * hf).round() as usize;
    let vanish_x = wf * rng.uniform(0.35, 0.65);
    let road_left = wf * rng.uniform(-0.35, 0.05);
    let road_right = wf * rng.uniform(0.95, 1.35);
    let lanes = rng.range_inclusive(cfg.min_lanes as i64, cfg.max_lanes as i64) as usize;

    // First two lines carry distinct classes; the rest are free.
    let mut classes = Vec::with_capacity(lanes);
    let first = 2 + rng.below(4) as u8;
    classes.push(first);
    classes.push(2 + (first - 2 + 1 + rng.below(3) as u8) % 4);
    for _ in 2..lanes {
        classes.push(2 + rng.below(4) as u8);
    }
    let lines: Vec<LaneLine> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let frac = (i + 1) as f64 / (lanes + 1) as f64;
            let jitter = rng.uniform(-0.03, 0.03) * wf;
            LaneLine {
                class: ClassId::from_u8(c).expect("lane class"),
                bottom_x: road_left + (road_right - road_left) * frac + jitter,
            }
        })
        .collect();
    let dash_phase = rng.next_f64();

    let sky = shade(&mut rng, [135, 170, 215], 0.12);
    let terrain = shade(&mut rng, [84, 112, 60], 0.2);
    let road = shade(&mut rng, [96, 96, 100], 0.2);
    let gain = rng.uniform(cfg.brightness.0, cfg.brightness.1);

    let mut image = vec![0u8; w * h * 3];
    let mut label = vec![ClassId::Undefined as u8; w * h];
    let bottom = (h - 1) as f64;
    for y in 0..h {
        let row_img = &mut image[y * w * 3..(y + 1) * w * 3];
        let row_lab = &mut label[y * w..(y + 1) * w];
        if y <= horizon {
            for px in row_img.chunks_exact_mut(3) {
                px.copy_from_slice(&sky);
            }
            continue;
        }
        // Perspective scale: 0 at the horizon, 1 at the bottom row.
        let t = (y - horizon) as f64 / (bottom - horizon as f64).max(1.0);
        let left = vanish_x + (road_left - vanish_x) * t;
        let right = vanish_x + (road_right - vanish_x) * t;
        for (x, (px, lab)) in row_img.chunks_exact_mut(3).zip(row_lab.iter_mut()).enumerate() {
            let cx = x as f64 + 0.5;
            if cx >= left && cx < right {
                px.copy_from_slice(&road);
                *lab = ClassId::Road as u8;
            } else {
                px.copy_from_slice(&terrain);
            }
        }
        let width = (cfg.lane_width * t).max(1.0);
        let depth = 1.0 / t;
        for line in &lines {
            let xc = vanish_x + (line.bottom_x - vanish_x) * t;
            let strips: Vec<(i64, i64)> = match line.class {
                ClassId::DoubleSolidYellow => {
                    let strip = (0.6 * width).max(1.0);
                    let gap = (0.6 * width).max(1.0);
                    let off = (strip + gap) / 2.0;
                    vec![span(xc - off, strip), span(xc + off, strip)]
                }
                ClassId::SingleDashedYellow => {
                    if (depth / cfg.dash_period + dash_phase).fract() < cfg.dash_duty {
                        vec![span(xc, width)]
                    } else {
                        vec![]
                    }
                }
                _ => vec![span(xc, width)],
            };
            let color = line.class.color();
            for (lo, hi) in strips {
                for x in lo.max(0)..hi.min(w as i64) {
                    let x = x as usize;
                    row_img[3 * x..3 * x + 3].copy_from_slice(&color);
                    row_lab[x] = line.class as u8;
                }
            }
        }
    }
    Ok(CleanScene { image, label, gain, rng })
}

/// Deterministic scene for `(seed, cfg)`: geometry and labels from
/// [`render_clean`], then brightness gain and additive noise on the image
/// only.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Sample> {
    let CleanScene {
        mut image,
        label,
        gain,
        mut rng,
    } = render_clean(seed, cfg)?;
    let amp = cfg.noise * 255.0;
    for v in image.iter_mut() {
        let noisy = *v as f64 * gain + amp * rng.uniform(-1.0, 1.0);
        *v = noisy.round().clamp(0.0, 255.0) as u8;
    }
    Ok(Sample {
        width: cfg.width,
        height: cfg.height,
        image,
        label,
        seed,
    })
}

/// `count` scenes with per-sample seeds derived from `(seed, index)`.
pub fn generate_dataset(seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| generate_scene(derive_seed(seed, i as u64), cfg))
        .collect()
}

/// Colour-maps a label map to interleaved RGB.
pub fn render_prediction(label: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(label.len() * 3);
    for (i, &v) in label.iter().enumerate() {
        let class = ClassId::from_u8(v)
            .ok_or_else(|| Error::Invalid(format!("class {v} at pixel {i} is outside 0..=5")))?;
        out.extend_from_slice(&class.color());
    }
    Ok(out)
}

/// Inverse of [`render_prediction`] for exact palette colours.
pub fn decode_rendered(rgb: &[u8]) -> Option<Vec<u8>> {
    rgb.chunks_exact(3)
        .map(|px| COLORMAP.iter().position(|c| c == px).map(|i| i as u8))
        .collect()
}

// --- PNM I/O ---------------------------------------------------------------

/// A decoded binary PNM: `P6` (3 channels) or `P5` (1 channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub comments: Vec<String>,
    pub data: Vec<u8>,
}

pub fn encode_pnm(channels: usize, width: usize, height: usize, comment: Option<&str>, data: &[u8]) -> Vec<u8> {
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n").into_bytes();
    if let Some(c) = comment {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(data);
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let bad = |m: &str| Error::Dataset(format!("malformed PNM: {m}"));
    let mut pos = 0;
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(bad(&format!("unsupported magic {other}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad number {s}")));
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit maxval 255 is supported"));
    }
    let len = width * height * channels;
    if bytes.len() < pos + len {
        return Err(bad("truncated raster"));
    }
    Ok(Pnm {
        channels,
        width,
        height,
        comments,
        data: bytes[pos..pos + len].to_vec(),
    })
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    fs::write(path, encode_pnm(3, width, height, None, rgb)).map_err(|e| Error::io(path, e))
}

// --- dataset directories -----------------------------------------------------

fn image_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("images").join(format!("{i:06}.ppm"))
}

fn label_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("labels").join(format!("{i:06}.pgm"))
}

/// Writes `manifest.txt`, `images/%06d.ppm` and `labels/%06d.pgm`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    let (w, h) = samples.first().map_or((0, 0), |s| (s.width, s.height));
    if samples.iter().any(|s| s.width != w || s.height != h) {
        return Err(Error::Dataset("all samples in a dataset must share one size".into()));
    }
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (i, s) in samples.iter().enumerate() {
        let seed = format!("seed {}", s.seed);
        let ip = image_path(dir, i);
        fs::write(&ip, encode_pnm(3, w, h, Some(&seed), &s.image)).map_err(|e| Error::io(&ip, e))?;
        let lp = label_path(dir, i);
        fs::write(&lp, encode_pnm(1, w, h, None, &s.label)).map_err(|e| Error::io(&lp, e))?;
    }
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, format!("{} {} {}\n", samples.len(), w, h)).map_err(|e| Error::io(&manifest, e))
}

fn count_files(dir: &Path, ext: &str) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().extension().and_then(|e| e.to_str()) == Some(ext) {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads a directory written by [`write_dataset`], validating every file.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let fields: Vec<usize> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Dataset(format!("manifest: bad number `{t}`"))))
        .collect::<Result<_>>()?;
    let [count, width, height] = fields[..] else {
        return Err(Error::Dataset("manifest must hold `count width height`".into()));
    };
    for (sub, ext) in [("images", "ppm"), ("labels", "pgm")] {
        let found = count_files(&dir.join(sub), ext)?;
        if found != count {
            return Err(Error::Dataset(format!(
                "manifest count mismatch: manifest lists {count} samples, {sub}/ holds {found}"
            )));
        }
    }
    (0..count)
        .map(|i| {
            let ip = image_path(dir, i);
            let lp = label_path(dir, i);
            if !ip.exists() {
                return Err(Error::Dataset(format!("sample {i:06}: missing image {}", ip.display())));
            }
            if !lp.exists() {
                return Err(Error::Dataset(format!("sample {i:06}: missing label {}", lp.display())));
            }
            let img = read_pnm(&ip)?;
            let lab = read_pnm(&lp)?;
            if img.channels != 3 || lab.channels != 1 {
                return Err(Error::Dataset(format!("sample {i:06}: expected P6 image and P5 label")));
            }
            for p in [&img, &lab] {
                if (p.width, p.height) != (width, height) {
                    return Err(Error::Dataset(format!(
                        "sample {i:06}: size {}x{} differs from manifest {width}x{height}",
                        p.width, p.height
                    )));
                }
            }
            if let Some(v) = lab.data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
                return Err(Error::Dataset(format!("sample {i:06}: label value {v} exceeds 5")));
            }
            let seed = img
                .comments
                .iter()
                .find_map(|c| c.strip_prefix("seed ").and_then(|s| s.trim().parse().ok()))
                .unwrap_or(i as u64);
            Ok(Sample {
                width,
                height,
                image: img.data,
                label: lab.data,
                seed,
            })
        })
        .collect()
}
