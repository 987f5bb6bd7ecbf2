//! The `gde` command line.
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::preprocess_image;
use crate::bench::{count_tokens, flop_report, run_latency_bench, BenchOptions, BenchScope, CSV_HEADER};
use crate::config::{ModelConfig, Variant, STRIDES};
use crate::error::{Error, Result};
use crate::eval::{evaluate_fixed_ap, EvalConfig};
use crate::flops::Stage;
use crate::io::{detections_to_records, load_image, records_to_eval, write_jsonl, Dataset, DetectionRecord};
use crate::model::{init_weights, Model};
use crate::text::{assemble_prompt, Prompt};
use crate::weights::{load_weights, save_weights};

/// Weight file used when `--weights` is not given.
pub const DEFAULT_WEIGHTS: &str = "weights.gde";

#[derive(Parser, Debug)]
#[command(name = "gde", about = "Open-set detector with original and efficient feature enhancers")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Model config JSON; fields not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight file to read (or write, for init-weights).
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write freshly initialized weights for the config.
    InitWeights,
    /// Detect prompt phrases in one image and print JSONL detections.
    Infer {
        #[arg(long)]
        image: PathBuf,
        /// Categories separated by periods, e.g. "cat. dog. car".
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Time predict for one or both variants and print CSV.
    Bench {
        #[arg(long, default_value_t = 640)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Benchmark only this variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// What to time: the full predict or the enhancer alone.
        #[arg(long, default_value = "predict")]
        scope: ScopeArg,
    },
    /// Per-stage FLOPs for one or both variants.
    Flops {
        #[arg(long, default_value_t = 640)]
        size: usize,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Image token counts per pyramid level.
    Tokens {
        #[arg(long, default_value_t = 640)]
        size: usize,
    },
    /// Run the model over a dataset, write JSONL detections and report fixed AP.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        fixed_cap: usize,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long)]
        variant: Option<Variant>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ScopeArg {
    Predict,
    Enhancer,
}

/// Parses `argv` (program name first) and runs the command, writing to the
/// process's stdout and stderr.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn run_cli_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        None => Ok(ModelConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::File { path: p.display().to_string(), source: e })?;
            ModelConfig::from_json(&text)
        }
    }
}

fn load_model(g: &GlobalArgs, cfg: &ModelConfig) -> Result<Model> {
    let path = g.weights.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_WEIGHTS));
    if !path.exists() {
        return Err(Error::Validation(format!(
            "weights file {} not found (create it with `gde init-weights --weights {}`)",
            path.display(),
            path.display()
        )));
    }
    Model::from_store(&load_weights(&path)?, cfg)
}

fn variants(v: Option<Variant>) -> Vec<Variant> {
    v.map_or_else(|| vec![Variant::Original, Variant::Efficient], |v| vec![v])
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let mut cfg = load_config(g.config.as_deref())?;
    match cli.command {
        Command::InitWeights => {
            let path = g.weights.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_WEIGHTS));
            let store = init_weights(&cfg, g.seed)?;
            save_weights(&store, &path)?;
            writeln!(out, "wrote {} tensors ({} values) to {}", store.len(), store.num_values(), path.display())?;
        }
        Command::Infer { image, prompt, threshold, variant } => {
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(v) = variant {
                cfg.enhancer.variant = v;
            }
            cfg.validate()?;
            let model = load_model(g, &cfg)?;
            let prompt = Prompt::parse_categories(&prompt)?;
            let raw = load_image(&image)?;
            let (img, scale) = preprocess_image(&raw, cfg.input_size)?;
            let dets = model.predict_image(&img, &prompt)?;
            let records = detections_to_records(0, &dets, prompt.phrases(), cfg.input_size, scale, raw.width, raw.height)?;
            write_jsonl(out, &records)?;
        }
        Command::Bench { size, runs, warmup, variant, scope } => {
            let scope = match scope {
                ScopeArg::Predict => BenchScope::Predict,
                ScopeArg::Enhancer => BenchScope::Enhancer,
            };
            writeln!(out, "{CSV_HEADER}")?;
            for v in variants(variant) {
                let opts = BenchOptions { warmup, runs, seed: g.seed, scope, ..BenchOptions::new(v, size) };
                writeln!(out, "{}", run_latency_bench(&cfg, &opts)?.csv_row())?;
            }
        }
        Command::Flops { size, variant } => {
            let reports = variants(variant)
                .into_iter()
                .map(|v| flop_report(&cfg, v, size, g.seed))
                .collect::<Result<Vec<_>>>()?;
            write!(out, "{:<20}", "stage")?;
            for r in &reports {
                write!(out, " {:>14}", r.variant.to_string())?;
            }
            writeln!(out)?;
            for s in Stage::ALL {
                write!(out, "{:<20}", s.name())?;
                for r in &reports {
                    write!(out, " {:>14}", r.get(s))?;
                }
                writeln!(out)?;
            }
            for (label, pick) in [("enhancer", 0), ("total", 1)] {
                write!(out, "{label:<20}")?;
                for r in &reports {
                    write!(out, " {:>14}", if pick == 0 { r.enhancer_total } else { r.total })?;
                }
                writeln!(out)?;
            }
            if let [o, e] = &reports[..] {
                writeln!(out, "enhancer ratio {:.3}", o.enhancer_total as f64 / e.enhancer_total as f64)?;
            }
        }
        Command::Tokens { size } => {
            let t = count_tokens(size, &STRIDES)?;
            for (i, n) in t.per_level.iter().enumerate() {
                writeln!(out, "P{} {n}", i + 3)?;
            }
            writeln!(out, "total {}", t.total)?;
            writeln!(out, "ratio {}", t.p5_ratio())?;
        }
        Command::Eval { dataset, out: out_path, fixed_cap, threshold, variant } => {
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(v) = variant {
                cfg.enhancer.variant = v;
            }
            cfg.validate()?;
            let model = load_model(g, &cfg)?;
            let ds = Dataset::load(&dataset)?;
            let records = predict_dataset(&model, &ds, eval_threads())?;
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(&out_path).map_err(|e| Error::File { path: out_path.display().to_string(), source: e })?,
            );
            write_jsonl(&mut file, &records)?;
            file.flush()?;
            let report = evaluate_fixed_ap(&records_to_eval(&ds, &records)?, &ds.ground_truth(), &EvalConfig::with_cap(fixed_cap))?;
            for (class, ap) in &report.per_class {
                writeln!(out, "AP {class} {ap:.4}")?;
            }
            writeln!(out, "mAP {:.4}", report.mean_ap)?;
            writeln!(err, "wrote {} detections to {}", records.len(), out_path.display())?;
        }
    }
    Ok(())
}

/// Worker count for `eval`, from `GDE_THREADS` (default 1).
pub fn eval_threads() -> usize {
    std::env::var("GDE_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Runs the model on every dataset image with all categories as the prompt.
/// Images are spread over `threads` workers; results come back in dataset
/// order regardless of scheduling.
pub fn predict_dataset(model: &Model, ds: &Dataset, threads: usize) -> Result<Vec<DetectionRecord>> {
    let prompt = assemble_prompt(&ds.categories)?;
    let size = model.config.input_size;
    let run_one = |i: usize| -> Result<Vec<DetectionRecord>> {
        let meta = &ds.images[i];
        let raw = load_image(ds.image_path(meta))?;
        let (img, scale) = preprocess_image(&raw, size)?;
        let dets = model.predict_image(&img, &prompt)?;
        detections_to_records(meta.id, &dets, prompt.phrases(), size, scale, raw.width, raw.height)
    };
    let n = ds.images.len();
    let threads = threads.clamp(1, n.max(1));
    let mut slots: Vec<Option<Result<Vec<DetectionRecord>>>> = (0..n).map(|_| None).collect();
    if threads == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_one(i));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run_one = &run_one;
                    s.spawn(move || (t..n).step_by(threads).map(|i| (i, run_one(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("eval worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
    }
    let mut records = Vec::new();
    for slot in slots {
        records.extend(slot.expect("every image processed")?);
    }
    Ok(records)
}
