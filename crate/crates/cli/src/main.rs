//! Experiment CLI for the label-transfer meta-learning library.
//!
//! Subcommands:
//! - `run`         one (method, k) configuration across its seeds
//! - `sweep`       cross product over `methods` x `ks` from the config
//! - `check-grads` the differentiation verification suite
//! - `ltn-map`     train and report the learned source->target label map
//!
//! Every config key can be overridden on the command line as `--key=value`
//! after the named flags.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use metaxt_cli::config::load_config;
use metaxt_cli::report;
use metaxt_cli::runner::{self, RunResult};

#[derive(Parser)]
#[command(name = "metaxt", version, about = "Cross-task label-transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (single method and k) over all its seeds.
    Run {
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results, curves, and plots.
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// Config overrides: --key=value ...
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run the cross product of the config's `methods` and `ks` axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run the gradient/meta-gradient verification suite.
    CheckGrads {
        #[arg(long, default_value_t = 20260810)]
        seed: u64,
    },
    /// Train (method from config; metaxt or xt) and print the learned
    /// label-transfer map per source label.
    LtnMap {
        #[arg(long)]
        config: PathBuf,
        /// Optional CSV output path for the mean map.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn print_summary(result: &RunResult) {
    for o in &result.outcomes {
        println!(
            "{:>10} k={:<4} seed={:<3} {}={:.4} (best@{} in {} ms)",
            result.method.name(),
            result.k,
            o.seed,
            o.metric_name,
            o.metric_value,
            o.steps_to_best,
            o.wall_ms
        );
    }
    for (seed, err) in &result.failures {
        println!("{:>10} k={:<4} seed={seed:<3} FAILED: {err}", result.method.name(), result.k);
    }
    println!(
        "{:>10} k={:<4} {}: mean={:.4} std={:.4}{}",
        result.method.name(),
        result.k,
        result.metric_name,
        result.mean,
        result.std,
        if result.is_partial() { " [partial]" } else { "" }
    );
}

fn emit(out_dir: &PathBuf, results: &[RunResult]) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    report::write_results_csv(out_dir.join("results.csv"), results)?;
    for result in results {
        for o in &result.outcomes {
            if let Some(text) = report::curves_csv(result, o.seed)? {
                let name = format!("curves_{}_k{}_seed{}.csv", result.method.name(), result.k, o.seed);
                fs::write(out_dir.join(name), text)?;
            }
        }
    }
    let svg = report::metric_vs_k_svg(results);
    let metric = results.first().map(|r| r.metric_name).unwrap_or("metric");
    fs::write(out_dir.join(format!("plot_{metric}_vs_k.svg")), svg)?;
    println!("wrote {}", out_dir.join("results.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out_dir, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let result = runner::run(&cfg)?;
            print_summary(&result);
            emit(&out_dir, std::slice::from_ref(&result))?;
            if result.is_partial() {
                std::process::exit(2);
            }
        }
        Command::Sweep { config, out_dir, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let results = runner::sweep(&cfg)?;
            for result in &results {
                print_summary(result);
            }
            emit(&out_dir, &results)?;
            if results.iter().any(|r| r.is_partial()) {
                std::process::exit(2);
            }
        }
        Command::CheckGrads { seed } => {
            let reports = metaxt_core::verify::run_all(seed);
            let mut failed = 0usize;
            for r in &reports {
                println!("{} {:<28} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            println!("{} checks, {} failed", reports.len(), failed);
            if failed > 0 {
                std::process::exit(1);
            }
        }
        Command::LtnMap { config, out, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let pair = runner::build_pair(&cfg)?;
            let result = runner::run_cell(&cfg, &pair, cfg.method, cfg.k);
            print_summary(&result);
            let maps: Vec<&Vec<Vec<f64>>> =
                result.outcomes.iter().filter_map(|o| o.ltn_map.as_ref()).collect();
            if maps.is_empty() {
                anyhow::bail!(
                    "no label-transfer map: method '{}' does not train an LTN",
                    cfg.method.name()
                );
            }
            let rows = maps[0].len();
            let cols = maps[0][0].len();
            let mut mean = vec![vec![0.0f64; cols]; rows];
            for map in &maps {
                for (r, row) in map.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        mean[r][c] += v / maps.len() as f64;
                    }
                }
            }
            println!(
                "\nMean transferred label distribution over {} seed(s):",
                maps.len()
            );
            print!("{}", report::ltn_map_pretty(&mean, &pair.source.labels, &pair.target.labels));
            if let Some(path) = out {
                fs::write(
                    &path,
                    report::ltn_map_table(&mean, &pair.source.labels, &pair.target.labels),
                )?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
