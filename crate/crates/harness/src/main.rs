use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grepsnet::groups::GroupSpec;
use grepsnet::layers::{
    audit_equivariance, build_model, load_checkpoint, Model, ModelKind, ModelSpec,
};
use grepsnet::tasks::{generate, Dataset, GenOptions, Task};
use grepsnet_harness::{
    bench_epoch, bench_forward, compare, evaluate, train, Batches, HarnessError, RunConfig,
};

#[derive(Parser)]
#[command(name = "grepsnet", version, about = "Train, evaluate and audit grepsnet models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config shorthands shared by `train` and `bench`.
#[derive(clap::Args, Default)]
struct Overrides {
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_size: Option<String>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, HarnessError> {
        let named = [
            ("task", &self.task),
            ("model", &self.model),
            ("group", &self.group),
            ("channels", &self.channels),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("train_size", &self.train_size),
        ];
        let mut out: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Validation(format!("`--set {kv}`: expected key=value")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Config file contents followed by these overrides.
    fn config(&self, file: Option<&Path>) -> Result<RunConfig, HarnessError> {
        let mut pairs = match file {
            Some(p) => config_pairs(p)?,
            None => Vec::new(),
        };
        pairs.extend(self.pairs()?);
        RunConfig::from_pairs(&pairs)
    }
}

fn config_pairs(path: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
    // Round-trip through the parser so syntax errors name the file.
    RunConfig::parse(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split('#').next())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it in the binary format (and optionally CSV).
    GenData {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        group: Option<String>,
        #[arg(long, default_value = "gaussian")]
        sampling: String,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train from a config file; flags override its keys.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on a dataset file or on freshly generated data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Measure the relative equivariance violation of a model.
    AuditEquivariance {
        /// Checkpoint path, or a model name to audit freshly initialised weights.
        #[arg(long)]
        model: String,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 1 when the violation exceeds this bound.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Median epoch time of several models on one task.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "mlp,grepsnet")]
        models: Vec<String>,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        measured: usize,
        /// Time one forward pass over this many samples instead of an epoch.
        #[arg(long)]
        forward: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train two configs on the same data and report loss and time ratios.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
}

fn parse<T: std::str::FromStr<Err = grepsnet::Error>>(s: &str) -> Result<T, HarnessError> {
    s.parse().map_err(HarnessError::validation)
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::GenData { task, count, seed, group, sampling, steps, dt, out, csv } => {
            let task: Task = parse(&task)?;
            let opts = GenOptions {
                group: group.as_deref().map(parse::<GroupSpec>).transpose()?,
                sampling: parse(&sampling)?,
                steps,
                dt,
            };
            let ds = generate(task, count, seed, &opts).map_err(HarnessError::validation)?;
            ds.write_binary(&out)?;
            if let Some(p) = csv {
                ds.write_csv(&p)?;
            }
            println!("wrote {} samples of {task} to {}", ds.len(), out.display());
        }
        Command::Train { config, overrides } => {
            let cfg = overrides.config(config.as_deref())?;
            let out = train(&cfg)?;
            for m in &out.metrics {
                if m.epoch % 10 == 9 || m.epoch + 1 == out.metrics.len() {
                    println!(
                        "epoch {:4}  train {:.6e}  test {:.6e}  {:.4}s",
                        m.epoch + 1,
                        m.train_loss,
                        m.test_loss,
                        m.epoch_time_seconds
                    );
                }
            }
            println!("best test loss {:.6e}", out.best_test_loss);
        }
        Command::Eval { checkpoint, data, count, seed } => {
            let model = load_checkpoint(&checkpoint)?;
            let spec = model.spec();
            let ds = match data {
                Some(p) => Dataset::read_binary(&p)?,
                None => generate(
                    spec.task,
                    count,
                    seed,
                    &GenOptions { group: Some(spec.group), ..GenOptions::default() },
                )?,
            };
            if ds.task != spec.task {
                return Err(HarnessError::Validation(format!(
                    "dataset task {} does not match model task {}",
                    ds.task, spec.task
                )));
            }
            let r = evaluate(model.as_ref(), &Batches::new(&ds)?)?;
            println!("mse {:.6e}", r.mse);
            println!("relative_frobenius {:.6e}", r.relative_frobenius);
            if r.accuracy.is_finite() {
                println!("accuracy {:.4}", r.accuracy);
            }
        }
        Command::AuditEquivariance { model, group, task, channels, trials, batch, seed, tolerance } => {
            let group = group.as_deref().map(parse::<GroupSpec>).transpose()?;
            let m: Box<dyn Model> = if Path::new(&model).is_file() {
                let m = load_checkpoint(Path::new(&model))?;
                if let Some(g) = group {
                    if g != m.spec().group {
                        return Err(HarnessError::Validation(format!(
                            "checkpoint is for {}, not {g}",
                            m.spec().group
                        )));
                    }
                }
                m
            } else {
                let kind: ModelKind = parse(&model)?;
                let task: Task = match task {
                    Some(t) => parse(&t)?,
                    None => return Err(HarnessError::Validation("fresh audits need --task".into())),
                };
                let g = group.unwrap_or_else(|| task.default_group());
                grepsnet_harness::compatible(task, kind, &g)?;
                let spec = ModelSpec::for_task(kind, task, g, channels).map_err(HarnessError::validation)?;
                build_model(&spec, seed)?
            };
            let r = audit_equivariance(m.as_ref(), trials, batch, seed)?;
            println!("model {}", m.spec());
            println!("trials {}", r.trials);
            println!("mean relative violation {:.3e}", r.mean_violation);
            println!("max relative violation {:.3e}", r.max_violation);
            if let Some(tol) = tolerance {
                if r.max_violation > tol {
                    return Err(HarnessError::Validation(format!(
                        "violation {:.3e} exceeds {tol:.1e}",
                        r.max_violation
                    )));
                }
            }
        }
        Command::Bench { config, models, warmup, measured, forward, overrides } => {
            let label = if forward.is_some() { "forward_seconds" } else { "epoch_seconds" };
            println!("{:<18} {:>10} {:>16}", "model", "params", label);
            for name in &models {
                let mut pairs = match &config {
                    Some(p) => config_pairs(p)?,
                    None => Vec::new(),
                };
                pairs.extend(overrides.pairs()?);
                pairs.push(("model".into(), name.clone()));
                let cfg = RunConfig::from_pairs(&pairs)?;
                let params = build_model(&cfg.model_spec()?, cfg.seed)?.params().count();
                let t = match forward {
                    Some(n) => bench_forward(&cfg, n, measured)?,
                    None => bench_epoch(&cfg, warmup, measured)?,
                };
                println!("{:<18} {:>10} {:>16.6}", name, params, t);
            }
        }
        Command::Compare { a, b, sizes } => {
            let ca = RunConfig::load(&a)?;
            let cb = RunConfig::load(&b)?;
            let sizes = if sizes.is_empty() { vec![ca.train_size] } else { sizes };
            let rows = compare(&ca, &cb, &sizes)?;
            println!("a: {} on {}   b: {} on {}", ca.model, ca.task, cb.model, cb.task);
            println!("{:>8} {:>14} {:>14} {:>10} {:>10}", "n", "loss_a", "loss_b", "loss_a/b", "time_a/b");
            for r in &rows {
                println!(
                    "{:>8} {:>14.6e} {:>14.6e} {:>10.4} {:>10.4}",
                    r.train_size,
                    r.loss_a,
                    r.loss_b,
                    r.loss_ratio(),
                    r.time_ratio()
                );
            }
            if ca.task == Task::O5 {
                println!("published epoch times on O(5): mlp 0.0083 s, grepsnet 0.013 s (ratio 1.57)");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
