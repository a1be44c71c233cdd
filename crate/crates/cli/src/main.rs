use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fastretrain::config::TrainConfig;
use fastretrain::data::{gen_synthetic, load_csv, load_idx, write_csv, write_idx, SyntheticKind};
use fastretrain::network::{evaluate, load_checkpoint};
use fastretrain::{Error, Result};
use fastretrain_cli::{bench_freeze, bench_memory, compare, exit_code, train, OUTPUT_DIR_ENV};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "fastretrain",
    version,
    about = "Fast retraining experiments for small networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Peak solver memory of one-shot vs batch-by-batch ridge solves.
    BenchMemory {
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        c: usize,
        /// Comma-separated retraining batch sizes.
        #[arg(long, value_delimiter = ',', default_value = "1024")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 4.0)]
        reg_c: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SGD epoch time and backward FLOPs at constant activation rates.
    BenchFreeze {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated activation rates.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6,0.4")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final accuracy over several seeds for two or more configs.
    Compare {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset as CSV or IDX.
    GenData {
        #[arg(long, default_value = "spirals")]
        kind: SyntheticKind,
        #[arg(long, default_value_t = 200)]
        n_per_class: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// CSV file, or IDX path prefix (`<out>-images.idx`, `<out>-labels.idx`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss and accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on the test split of this config (training split if it has none).
        #[arg(long, conflicts_with_all = ["csv", "images"])]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "images")]
        csv: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Idx,
}

fn output_dir(flag: Option<PathBuf>, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .or(flag)
        .unwrap_or_else(fallback)
}

fn write_table<T: Serialize>(dir: &Path, stem: &str, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?
    );
    Ok(())
}

fn config_name(path: &Path, index: usize, taken: &[(String, TrainConfig)]) -> String {
    let stem = path
        .file_stem()
        .map_or_else(|| "config".into(), |s| s.to_string_lossy().into_owned());
    if taken.iter().any(|(n, _)| *n == stem) {
        format!("{stem}-{index}")
    } else {
        stem
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let out = output_dir(None, || cfg.output_dir.clone());
            let s = train(&cfg, &out)?;
            for r in &s.rows {
                println!(
                    "epoch {:>3}  r_a {:.2}  loss {:.4}  train acc {:.4}  test acc {}",
                    r.epoch,
                    r.r_a,
                    r.train_loss,
                    r.train_accuracy,
                    r.test_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
            println!("wrote {}", out.display());
        }
        Command::BenchMemory {
            n,
            d,
            c,
            batches,
            reg_c,
            seed,
            out,
        } => {
            let rows = bench_memory(n, d, c, &batches, reg_c, seed)?;
            let out = output_dir(out, || "bench-out".into());
            write_table(&out, "bench_memory", &rows)?;
            for r in &rows {
                println!(
                    "batch {:>6}  one-shot {:>12} B  rls {:>12} B  ratio {:.4}  divergence {:.2e}",
                    r.batch, r.oneshot_peak_bytes, r.rls_peak_bytes, r.ratio, r.divergence
                );
            }
        }
        Command::BenchFreeze {
            config,
            rates,
            epochs,
            out,
        } => {
            let cfg = TrainConfig::from_file(&config)?;
            let rows = bench_freeze(&cfg, &rates, epochs)?;
            let out = output_dir(out, || "bench-out".into());
            write_table(&out, "bench_freeze", &rows)?;
            for r in &rows {
                println!(
                    "rate {:.2}  l_a {}/{}  median epoch {:>9.1} ms  flops ratio {:.3}  frozen intact {}",
                    r.rate, r.l_a, r.l_c, r.median_epoch_ms, r.flops_ratio, r.frozen_intact
                );
            }
        }
        Command::Compare { configs, seeds, out } => {
            let mut named = Vec::with_capacity(configs.len());
            for (i, p) in configs.iter().enumerate() {
                let cfg = TrainConfig::from_file(p)?;
                named.push((config_name(p, i, &named), cfg));
            }
            let out = output_dir(out, || "compare-out".into());
            let (rows, runs) = compare(&named, &seeds, &out)?;
            write_table(&out, "compare", &rows)?;
            write_table(&out, "compare_runs", &runs)?;
            for r in &rows {
                println!("{:<24} {:.4} ± {:.4}  (n = {})", r.config, r.mean, r.std, r.runs);
            }
        }
        Command::GenData {
            kind,
            n_per_class,
            classes,
            noise,
            seed,
            format,
            out,
        } => {
            let ds = gen_synthetic(kind, n_per_class, classes, noise, seed)?;
            match format {
                Format::Csv => write_csv(&ds, &out)?,
                Format::Idx => {
                    let prefix = out.display().to_string();
                    write_idx(&ds, format!("{prefix}-images.idx"), format!("{prefix}-labels.idx"))?;
                }
            }
        }
        Command::Eval {
            checkpoint,
            config,
            csv,
            images,
            labels,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let data = match (config, csv, images, labels) {
                (Some(c), _, _, _) => {
                    let (train, test) = TrainConfig::from_file(c)?.load_data()?;
                    test.unwrap_or(train)
                }
                (_, Some(p), _, _) => load_csv(p)?,
                (_, _, Some(i), Some(l)) => load_idx(i, l)?,
                _ => {
                    return Err(Error::InvalidArgument(
                        "give --config, --csv or --images/--labels".into(),
                    ))
                }
            };
            let e = evaluate(&net, &data, 1024)?;
            #[derive(Serialize)]
            struct Report {
                samples: usize,
                loss: f64,
                accuracy: f64,
                residual: f64,
            }
            print_json(&Report {
                samples: data.len(),
                loss: e.loss,
                accuracy: e.accuracy,
                residual: e.residual,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
