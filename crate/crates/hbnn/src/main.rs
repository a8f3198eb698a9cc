//! Command-line interface: training, evaluation, flip statistics, the math
//! property suite, loss-surface export and parameter/OPs accounting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use hbnn::error::{Error, Result};
use hbnn::mathcheck::{run_suite, FaultInjection};
use hbnn::nn::{count_params_ops, ArchDescriptor};
use hbnn::train::checkpoint::{checkpoint_load, CheckpointState};
use hbnn::train::data::DatasetSpec;
use hbnn::train::metrics::{flip_rate, MetricsRecord};
use hbnn::train::surface::loss_surface_grid;
use hbnn::train::{evaluate, eval_loss, write_atomic, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "hbnn", version, about = "Hyperbolic binary neural networks")]
struct Cli {
    /// Override the config seed (training) or the sampling seed (math-check,
    /// surface).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for batch-parallel compute (results do not depend on
    /// this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a JSON config; writes metrics.csv, final.ckpt and
    /// summary.json into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --set mode=plain-bnn --set epochs=5
        /// --set dataset.path=data/mnist
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Accuracy and loss of a checkpoint on the config's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Samples in the reference batch (shared with `surface`).
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// Weight-flip rates of a checkpoint against its pre-training snapshot
    /// (or against another checkpoint).
    FlipStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the algebra/parametrization/binarization property suite.
    MathCheck {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 1.0])]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Internal regression hook; the suite must fail when set.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Loss-surface grid around a checkpoint; writes surface.csv.
    Surface {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parameter size and operation counts of an architecture descriptor.
    OpsCount {
        #[arg(long)]
        arch: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Exactness does not depend on the pool size (fixed-chunk
        // reductions), so this is purely a throughput knob.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Train { config, set, out } => cmd_train(&config, &set, &out, cli.seed),
        Cmd::Eval {
            checkpoint,
            config,
            out,
            batch_size,
        } => cmd_eval(&checkpoint, &config, out.as_deref(), batch_size),
        Cmd::FlipStats {
            checkpoint,
            baseline,
            out,
        } => cmd_flip_stats(&checkpoint, baseline.as_deref(), out.as_deref()),
        Cmd::MathCheck {
            radii,
            trials,
            inject_fault,
        } => cmd_math_check(&radii, trials, cli.seed.unwrap_or(0), inject_fault.as_deref()),
        Cmd::Surface {
            checkpoint,
            config,
            extent,
            resolution,
            batch_size,
            out,
        } => cmd_surface(
            &checkpoint,
            &config,
            extent,
            resolution,
            batch_size,
            &out,
            cli.seed.unwrap_or(0),
        ),
        Cmd::OpsCount { arch } => cmd_ops_count(&arch),
    }
}

/// Parsed training spec: dataset, architecture path, hyperparameters.
struct TrainSpec {
    dataset: DatasetSpec,
    arch_path: PathBuf,
    config: TrainConfig,
}

const KNOWN_TOP_LEVEL: &[&str] = &[
    "dataset",
    "arch",
    "radius",
    "cluster_size",
    "selection_period",
    "epochs",
    "batch_size",
    "base_lr",
    "momentum",
    "weight_decay",
    "seed",
    "mode",
];

/// Load the config, apply `--set` overrides, and report every problem in a
/// single pass.
fn load_train_spec(path: &Path, overrides: &[String]) -> Result<TrainSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(vec![format!("config is not valid JSON: {e}")]))?;

    let mut issues = Vec::new();
    for ov in overrides {
        if let Err(msg) = apply_override(&mut value, ov) {
            issues.push(msg);
        }
    }

    let obj = match value.as_object() {
        Some(o) => o.clone(),
        None => {
            return Err(Error::Config(vec![
                "config root must be a JSON object".into()
            ]))
        }
    };
    for key in obj.keys() {
        if !KNOWN_TOP_LEVEL.contains(&key.as_str()) {
            issues.push(format!("unknown config key `{key}`"));
        }
    }

    let dataset: Option<DatasetSpec> = match obj.get("dataset") {
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(d) => Some(d),
            Err(e) => {
                issues.push(format!("invalid dataset: {e}"));
                None
            }
        },
        None => {
            issues.push("missing required key `dataset`".into());
            None
        }
    };
    let arch_path: Option<PathBuf> = match obj.get("arch") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => {
            issues.push("`arch` must be a path string".into());
            None
        }
        None => {
            issues.push("missing required key `arch`".into());
            None
        }
    };

    let mut hp = obj.clone();
    hp.remove("dataset");
    hp.remove("arch");
    let config: Option<TrainConfig> = match serde_json::from_value(Value::Object(hp)) {
        Ok(c) => Some(c),
        Err(e) => {
            issues.push(format!("invalid hyperparameters: {e}"));
            None
        }
    };
    if let Some(c) = &config {
        issues.extend(c.validate());
    }

    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    Ok(TrainSpec {
        dataset: dataset.unwrap(),
        arch_path: arch_path.unwrap(),
        config: config.unwrap(),
    })
}

/// `key=value` with dot paths into nested objects; the key must already
/// exist in the config.
fn apply_override(value: &mut Value, ov: &str) -> std::result::Result<(), String> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| format!("override `{ov}` is not of the form key=value"))?;
    let mut cursor = &mut *value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| format!("override `{key}`: `{}` is not an object", parts[..i].join(".")))?;
        if !obj.contains_key(*part) {
            return Err(format!("override `{key}` does not reference a known config key"));
        }
        cursor = obj.get_mut(*part).unwrap();
    }
    // interpret the value as JSON when possible, else as a bare string
    *cursor = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    Ok(())
}

fn cmd_train(config: &Path, set: &[String], out: &Path, seed: Option<u64>) -> Result<u8> {
    let mut spec = load_train_spec(config, set)?;
    if let Some(s) = seed {
        spec.config.seed = s;
    }
    let arch = ArchDescriptor::load(&spec.arch_path)?;
    let (train, test) = spec.dataset.load()?;
    std::fs::create_dir_all(out)?;

    let mut trainer = Trainer::new(spec.config, arch, train, test)?;
    let k = trainer.model.binary_layers().len();
    let mut csv = MetricsRecord::csv_header(k);
    csv.push('\n');
    let mut last: Option<MetricsRecord> = None;
    let summary = trainer.run(|r| {
        println!(
            "epoch {:>3}  step {:>7}  lr {:.5}  loss {:.4}  acc {:.4}",
            r.epoch, r.step, r.lr, r.train_loss, r.test_accuracy
        );
        csv.push_str(&r.csv_row());
        csv.push('\n');
        last = Some(r.clone());
    })?;

    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
    trainer.save_checkpoint(&out.join("final.ckpt"))?;
    let summary_json = serde_json::to_string_pretty(&summary)?;
    write_atomic(&out.join("summary.json"), summary_json.as_bytes())?;
    println!(
        "final accuracy {:.4}; outputs in {}",
        summary.final_test_accuracy,
        out.display()
    );
    Ok(0)
}

fn load_model_and_data(
    checkpoint: &Path,
    config: &Path,
) -> Result<(CheckpointState, DatasetSpec)> {
    let state = checkpoint_load(checkpoint)?;
    let spec = load_train_spec(config, &[])?;
    Ok((state, spec.dataset))
}

fn cmd_eval(checkpoint: &Path, config: &Path, out: Option<&Path>, batch_size: usize) -> Result<u8> {
    let (mut state, dataset) = load_model_and_data(checkpoint, config)?;
    let (_, test) = dataset.load()?;
    let accuracy = evaluate(&mut state.model, &test)?;
    let n = batch_size.min(test.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, y) = test.batch(&idx);
    let batch_loss = eval_loss(&mut state.model, &x, &y)?;
    println!("accuracy {accuracy:.6}");
    println!("batch_loss {batch_loss:.12} (first {n} test samples)");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::json!({
            "accuracy": accuracy,
            "batch_loss": batch_loss,
            "batch_size": n,
        });
        write_atomic(&dir.join("eval.json"), serde_json::to_string_pretty(&json)?.as_bytes())?;
    }
    Ok(0)
}

fn cmd_flip_stats(checkpoint: &Path, baseline: Option<&Path>, out: Option<&Path>) -> Result<u8> {
    let state = checkpoint_load(checkpoint)?;
    let current = state.model.binary_weight_signs()?;
    let reference = match baseline {
        Some(p) => checkpoint_load(p)?.model.binary_weight_signs()?,
        None => state.initial_signs.clone(),
    };
    let rates = flip_rate(&reference, &current)?;
    let mut csv = String::from("layer,flip_rate\n");
    for (i, r) in rates.iter().enumerate() {
        println!("layer {} flip rate {:.6}", i + 1, r);
        csv.push_str(&format!("{},{}\n", i + 1, r));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("flip_stats.csv"), csv.as_bytes())?;
    }
    Ok(0)
}

fn cmd_math_check(
    radii: &[f64],
    trials: usize,
    seed: u64,
    inject_fault: Option<&str>,
) -> Result<u8> {
    let fault = match inject_fault {
        None => FaultInjection::None,
        Some("mobius-sign") => FaultInjection::MobiusSignFlip,
        Some(other) => {
            return Err(Error::Config(vec![format!(
                "unknown fault `{other}` (expected mobius-sign)"
            )]))
        }
    };
    let reports = run_suite(radii, trials, seed, fault)?;
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<6} {:<42} max_error {:>12.3e}  tolerance {:>9.1e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tolerance
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} properties failed");
        return Ok(1);
    }
    println!("all {} properties passed", reports.len());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_surface(
    checkpoint: &Path,
    config: &Path,
    extent: f64,
    resolution: usize,
    batch_size: usize,
    out: &Path,
    seed: u64,
) -> Result<u8> {
    let (mut state, dataset) = load_model_and_data(checkpoint, config)?;
    let (_, test) = dataset.load()?;
    let n = batch_size.min(test.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, y) = test.batch(&idx);
    let grid = loss_surface_grid(&mut state.model, &x, &y, seed, extent, resolution)?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("surface.csv"), grid.to_csv().as_bytes())?;
    println!(
        "surface {}×{} over ±{} written to {} (center loss {:.12})",
        resolution,
        resolution,
        extent,
        out.join("surface.csv").display(),
        grid.center()
    );
    Ok(0)
}

fn cmd_ops_count(arch_path: &Path) -> Result<u8> {
    let arch = ArchDescriptor::load(arch_path)?;
    let cost = count_params_ops(&arch)?;
    let fp = count_params_ops(&arch.to_full_precision())?;
    println!("architecture: {}", arch.name);
    println!(
        "  parameters: {} full-precision + {} binary",
        cost.full_params, cost.binary_params
    );
    println!("  size: {:.2} MB", cost.size_mb);
    if cost.binary_params > 0 {
        println!(
            "  size reduction vs full precision: {:.2}x ({:.2} MB)",
            fp.size_mb / cost.size_mb,
            fp.size_mb
        );
    }
    println!("  OPs: {:.3e} ({:.2}e8)", cost.ops, cost.ops / 1e8);
    if cost.binary_params > 0 {
        println!("  full-precision OPs: {:.3e}", fp.ops);
    }
    Ok(0)
}
