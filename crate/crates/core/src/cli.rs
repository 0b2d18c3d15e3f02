//! Command-line front end. [`dispatch`] returns the process exit code:
//! 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analyzer::{self, Analysis, ReportFormat};
use crate::arch::{parse_spec, preset, ArchitectureSpec, PRESET_NAMES};
use crate::bench::benchmark_inference;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::metrics::{iou_per_class, miou};
use crate::network::Network;
use crate::synth::{self, generate_dataset, read_dataset, write_dataset, ClassId, SceneConfig, NUM_CLASSES};
use crate::train::{evaluate, train_loop, write_log, TrainConfig};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Parser)]
#[command(name = "edaseg", version, about = "Build, analyze, train and benchmark EDA segmentation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic lane dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 144)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
    },
    /// Report per-stage shapes, parameters, MACs and receptive fields.
    Analyze {
        /// Preset name; repeatable.
        #[arg(long)]
        arch: Vec<String>,
        /// Architecture file; repeatable.
        #[arg(long)]
        spec: Vec<PathBuf>,
        #[arg(long, default_value_t = 720)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = NUM_CLASSES)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Compare exactly two architectures row by row.
        #[arg(long)]
        diff: bool,
    },
    /// Train a fresh network on a dataset directory.
    Train {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        arch: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3000)]
        iters: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Training log path (defaults to the checkpoint path plus `.log`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        no_class_weights: bool,
    },
    /// Compute per-class IoU and mIoU of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Time inference at a given input size.
    Bench {
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        arch: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 720)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Segment one PPM image and write the colour-mapped prediction.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in architectures.
    Presets,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let result = match cli.command {
        Command::Generate {
            out,
            count,
            seed,
            width,
            height,
        } => cmd_generate(&out, count, seed, width, height),
        Command::Analyze {
            width,
            height,
            classes,
            format,
            diff,
            ..
        } => {
            let sub = matches.subcommand_matches("analyze").expect("analyze matches");
            cmd_analyze(ordered_sources(sub), width, height, classes, format, diff)
        }
        Command::Train {
            arch,
            spec,
            data,
            iters,
            batch,
            lr,
            seed,
            out,
            log,
            no_class_weights,
        } => (|| {
            let spec = resolve_spec(arch.as_deref(), spec.as_deref())?;
            let mut cfg = TrainConfig::new(spec);
            cfg.max_iter = iters;
            cfg.batch_size = batch;
            cfg.base_lr = lr;
            cfg.seed = seed;
            cfg.class_weighting = !no_class_weights;
            let log = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log");
                p.into()
            });
            cmd_train(&cfg, &data, &out, &log)
        })(),
        Command::Eval { model, data, format } => cmd_eval(&model, &data, format),
        Command::Bench {
            arch,
            model,
            width,
            height,
            runs,
            warmup,
            seed,
            format,
        } => (|| {
            let net = match (arch, model) {
                (Some(a), _) => Network::<f32>::build(&preset(&a)?, NUM_CLASSES, seed)?,
                (None, Some(m)) => load_checkpoint(&m)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            cmd_bench(&net, width, height, runs, warmup, format)
        })(),
        Command::Infer { model, input, out } => cmd_infer(&model, &input, &out),
        Command::Presets => cmd_presets(),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\n{}", Cli::command().render_usage());
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum Source {
    Preset(String),
    File(PathBuf),
}

/// `--arch` and `--spec` values in command-line order.
fn ordered_sources(m: &ArgMatches) -> Vec<Source> {
    let mut tagged: Vec<(usize, Source)> = Vec::new();
    if let (Some(vals), Some(idx)) = (m.get_many::<String>("arch"), m.indices_of("arch")) {
        tagged.extend(idx.zip(vals).map(|(i, v)| (i, Source::Preset(v.clone()))));
    }
    if let (Some(vals), Some(idx)) = (m.get_many::<PathBuf>("spec"), m.indices_of("spec")) {
        tagged.extend(idx.zip(vals).map(|(i, v)| (i, Source::File(v.clone()))));
    }
    tagged.sort_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, s)| s).collect()
}

fn load_spec_file(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text)
}

fn resolve_spec(arch: Option<&str>, spec: Option<&Path>) -> Result<ArchitectureSpec> {
    match (arch, spec) {
        (Some(a), _) => preset(a),
        (None, Some(p)) => load_spec_file(p),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn stdout_write(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Failure::Runtime(Error::io(Path::new("<stdout>"), e)))
        }
        _ => Ok(()),
    }
}

fn cmd_generate(out: &Path, count: usize, seed: u64, width: usize, height: usize) -> CliResult {
    let cfg = SceneConfig::with_size(width, height);
    let samples = generate_dataset(seed, count, &cfg)?;
    write_dataset(out, &samples)?;
    stdout_write(&format!("wrote {count} scenes of {width}x{height} to {}", out.display()))
}

fn cmd_analyze(
    sources: Vec<Source>,
    width: usize,
    height: usize,
    classes: usize,
    format: Format,
    diff: bool,
) -> CliResult {
    if sources.is_empty() {
        return Err(Failure::Usage("analyze needs at least one --arch or --spec".into()));
    }
    if diff && sources.len() != 2 {
        return Err(Failure::Usage(format!(
            "--diff compares exactly two architectures, got {}",
            sources.len()
        )));
    }
    let analyses: Vec<Analysis> = sources
        .iter()
        .map(|s| {
            let spec = match s {
                Source::Preset(n) => preset(n)?,
                Source::File(p) => load_spec_file(p)?,
            };
            analyzer::analyze(&spec, classes, height, width)
        })
        .collect::<Result<_>>()?;
    let text = match (format, diff) {
        (Format::Json, true) => {
            let (a, b) = (&analyses[0], &analyses[1]);
            serde_json::to_string_pretty(&json!({
                "left": a,
                "right": b,
                "rows": analyzer::diff_reports(&a.stages, &b.stages),
                "params_delta": b.total_params as i128 - a.total_params as i128,
                "macs_delta": b.total_macs as i128 - a.total_macs as i128,
            }))
            .expect("diff serializes")
        }
        (Format::Json, false) => serde_json::to_string_pretty(&analyses).expect("analysis serializes"),
        (Format::Text, true) => analyzer::render_diff(&analyses[0], &analyses[1]),
        (Format::Text, false) => analyses
            .iter()
            .map(|a| {
                format!(
                    "{} @ {}x{}: params {}  MACs {}\n{}",
                    a.arch,
                    a.height,
                    a.width,
                    a.total_params,
                    a.total_macs,
                    analyzer::render_report(&a.stages, ReportFormat::Text)
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n"),
    };
    stdout_write(&text)
}

fn cmd_train(cfg: &TrainConfig, data: &Path, out: &Path, log_path: &Path) -> CliResult {
    let samples = read_dataset(data)?;
    let every = (cfg.max_iter / 20).max(1);
    let outcome = train_loop(cfg, &samples, |e| {
        if e.iter % every == 0 || e.iter + 1 == cfg.max_iter {
            eprintln!("iter {:>6}  lr {:.3e}  loss {:.4}", e.iter, e.lr, e.loss);
        }
    })?;
    save_checkpoint(&outcome.network, out)?;
    let file = std::fs::File::create(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_log(&mut w, &outcome.log)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(log_path, e))?;
    stdout_write(&format!(
        "trained {} for {} iterations; checkpoint {}, log {}",
        cfg.arch.name,
        cfg.max_iter,
        out.display(),
        log_path.display()
    ))
}

fn cmd_eval(model: &Path, data: &Path, format: Format) -> CliResult {
    let net = load_checkpoint(model)?;
    let samples = read_dataset(data)?;
    let cm = evaluate(&net, &samples)?;
    let ious = iou_per_class(&cm);
    let m = miou(&cm);
    let text = match format {
        Format::Json => {
            let per_class: serde_json::Map<String, serde_json::Value> = ClassId::ALL[1..]
                .iter()
                .map(|c| (c.short_name().to_string(), json!(ious[*c as usize])))
                .collect();
            serde_json::to_string_pretty(&json!({
                "arch": net.spec().name,
                "samples": samples.len(),
                "miou": m,
                "iou": per_class,
                "confusion": cm.counts,
            }))
            .expect("eval serializes")
        }
        Format::Text => {
            let mut lines: Vec<String> = ClassId::ALL[1..]
                .iter()
                .map(|c| {
                    let v = ious[*c as usize].map_or("exempt".to_string(), |v| format!("{v:.3}"));
                    format!("{:<10} {v}", c.short_name())
                })
                .collect();
            lines.push(match m {
                Some(v) => format!("mIoU {v:.3}"),
                None => "mIoU undefined (no counted pixels)".into(),
            });
            lines.join("\n")
        }
    };
    stdout_write(&text)
}

fn cmd_bench(net: &Network<f32>, width: usize, height: usize, runs: usize, warmup: usize, format: Format) -> CliResult {
    let r = benchmark_inference(net, height, width, runs, warmup)?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&r).expect("bench serializes"),
        Format::Text => format!(
            "{} @ {}x{}: {} runs ({} warmup)  mean {:.2} ms  median {:.2} ms  std {:.2} ms",
            r.arch, r.height, r.width, r.runs, r.warmup, r.mean_ms, r.median_ms, r.std_ms
        ),
    };
    stdout_write(&text)
}

fn cmd_infer(model: &Path, input: &Path, out: &Path) -> CliResult {
    let net = load_checkpoint(model)?;
    let img = synth::read_pnm(input)?;
    if img.channels != 3 {
        return Err(Failure::Runtime(Error::Dataset(format!(
            "{}: expected a P6 colour image",
            input.display()
        ))));
    }
    let sample = synth::Sample {
        width: img.width,
        height: img.height,
        image: img.data,
        label: Vec::new(),
        seed: 0,
    };
    let x = Tensor::from_vec(Shape::new(1, 3, img.height, img.width), sample.image_planar())?;
    let pred = net.predict(&x)?;
    let rgb = synth::render_prediction(&pred)?;
    synth::write_ppm(out, img.width, img.height, &rgb)?;
    stdout_write(&format!("wrote {}", out.display()))
}

fn cmd_presets() -> CliResult {
    let lines: Vec<String> = PRESET_NAMES
        .iter()
        .map(|n| {
            let spec = preset(n)?;
            Ok(format!(
                "{:<18} {:>3} modules  {:>8} params",
                n,
                spec.module_count(),
                analyzer::count_params(&spec, NUM_CLASSES)
            ))
        })
        .collect::<Result<_>>()?;
    stdout_write(&lines.join("\n"))
}
