use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advlab_core::experiments::config::ExperimentConfig;
use advlab_core::experiments::fit::{fit_slope, SlopeFit};
use advlab_core::experiments::reports::{equiv_report, rates_csv, rates_table, rates_text};
use advlab_core::experiments::svg::{emit_svg, Series};
use advlab_core::experiments::sweep::{risk_from_config, run_sweep, train_from_config};
use advlab_core::experiments::verify::{run_verify, Fault};
use advlab_core::experiments::config::parse_rational;
use advlab_core::train::Checkpoint;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "advlab", version, about = "Adversarial risk experiments for norm-constrained ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// INI configuration; built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suites; exits nonzero if any fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run only these suites (repeatable).
        #[arg(long)]
        suite: Vec<String>,
        /// Deliberately break training to check the suites catch it.
        #[arg(long, value_parser = ["skip-projection"])]
        inject_fault: Option<String>,
    },
    /// Train one model and write a checkpoint and its history.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Risk brackets of a checkpoint on a fresh evaluation sample.
    Risk {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Train over the n list and seeds, then fit log-log slopes.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Rate exponents and schedules over a (d, alpha, n) grid.
    Rates {
        #[command(flatten)]
        common: Common,
        /// Input dimensions, comma separated (default: [data] d).
        #[arg(long, value_delimiter = ',')]
        d: Vec<u32>,
        /// Smoothness values such as 1 or 3/2 (default: [data] alpha).
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<String>,
        /// Sample sizes (default: [sweep] n_list).
        #[arg(long, value_delimiter = ',')]
        n: Vec<u64>,
    },
    /// Pointwise versus distribution-shift adversary on random grid instances.
    Equiv {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.override_seed(s);
    }
    cfg.validate()?;
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn verify(common: &Common, suite: &[String], fault: Option<&str>) -> Result<bool> {
    let cfg = load(common)?;
    let fault = fault.map(str::parse::<Fault>).transpose()?;
    let report = run_verify(&cfg.verify, suite, fault)?;
    print!("{}", report.text());
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(report.passed)
}

fn train(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let dir = out_dir(common)?;
    let run = train_from_config(&cfg)?;
    let ckpt = Checkpoint::new(run.model.params(), &run.train_config)?;
    write_json(&dir.join("checkpoint.json"), &ckpt)?;
    match common.format {
        Format::Csv => run.history.write_csv(File::create(dir.join("history.csv"))?)?,
        Format::Json => write_json(&dir.join("history.json"), &run.history)?,
    }
    let last = run.history.records.last().ok_or_else(|| anyhow!("no epochs recorded"))?;
    println!(
        "trained {} epochs: adversarial risk {:.6}, natural risk {:.6}, kappa {:.4}",
        run.history.records.len(),
        last.adv_risk_est,
        last.nat_risk,
        last.kappa
    );
    println!("trajectory hash {}", run.history.trajectory_hash());
    println!("checkpoint written to {}", dir.join("checkpoint.json").display());
    Ok(())
}

fn risk(common: &Common, model: &Path) -> Result<()> {
    let cfg = load(common)?;
    let text = fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).context("parsing checkpoint")?;
    let report = risk_from_config(&cfg, &ckpt.params()?)?;
    match common.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            println!("{}", advlab_core::RiskReport::csv_header().join(","));
            println!("{}", report.csv_row().join(","));
        }
    }
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let dir = out_dir(common)?;
    let records = run_sweep(&cfg, Some(&dir))?;
    let failed = records.iter().filter(|r| !r.error.is_empty()).count();
    println!("{} runs ({failed} failed), results in {}", records.len(), dir.join("results.csv").display());
    let csv = dir.join("results.csv");
    let mut fits: Vec<(String, SlopeFit)> = Vec::new();
    let mut series = Vec::new();
    for col in ["l2_sq", "excess_adv", "adv_lower"] {
        match fit_slope(&csv, "n", col, &["task"]) {
            Ok(found) => {
                for f in found {
                    println!(
                        "{col}: slope {:.4} +/- {:.4} over {} sample sizes",
                        f.slope, f.stderr, f.points
                    );
                    let pts = means(&records, col);
                    if !pts.is_empty() {
                        series.push(Series {
                            label: col.to_string(),
                            points: pts,
                            fit: Some((f.slope, f.intercept)),
                        });
                    }
                    fits.push((col.to_string(), f));
                }
            }
            Err(e) => log::warn!("no fit for {col}: {e}"),
        }
    }
    write_json(&dir.join("slopes.json"), &fits)?;
    if !series.is_empty() {
        emit_svg(&series, "n", "risk", &dir.join("plot.svg"))?;
    }
    Ok(())
}

/// Seed-averaged positive values of `col` by `n`.
fn means(records: &[advlab_core::experiments::RunRecord], col: &str) -> Vec<(f64, f64)> {
    let mut by_n: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in records.iter().filter(|r| r.error.is_empty()) {
        let v = match col {
            "l2_sq" => r.l2_sq,
            "excess_adv" => r.excess_adv,
            _ => r.adv_lower,
        };
        if v > 0.0 && v.is_finite() {
            let e = by_n.entry(r.n).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    by_n.into_iter().map(|(n, (s, c))| (n as f64, s / c as f64)).collect()
}

fn rates(common: &Common, d: &[u32], alpha: &[String], n: &[u64]) -> Result<()> {
    let cfg = load(common)?;
    let ds = if d.is_empty() { vec![cfg.data.d as u32] } else { d.to_vec() };
    let alphas = if alpha.is_empty() {
        vec![cfg.data.alpha]
    } else {
        alpha
            .iter()
            .map(|a| parse_rational(a).ok_or_else(|| anyhow!("bad alpha {a:?}")))
            .collect::<Result<_>>()?
    };
    let ns: Vec<u64> = if n.is_empty() { cfg.sweep.n_list.iter().map(|&v| v as u64).collect() } else { n.to_vec() };
    let rows = rates_table(&ds, &alphas, &ns, cfg.model.width_const)?;
    print!("{}", rates_text(&rows));
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        match common.format {
            Format::Csv => fs::write(dir.join("rates.csv"), rates_csv(&rows)?)?,
            Format::Json => write_json(&dir.join("rates.json"), &rows)?,
        }
    }
    Ok(())
}

fn equiv(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let rep = equiv_report(cfg.verify.equivalence_instances, cfg.verify.split_instances, cfg.verify.seed)?;
    print!("{}", rep.text());
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("equiv.json"), &rep)?;
    }
    Ok(rep.passed)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify {
            common,
            suite,
            inject_fault,
        } => verify(&common, &suite, inject_fault.as_deref()),
        Command::Train { common } => train(&common).map(|_| true),
        Command::Risk { common, model } => risk(&common, &model).map(|_| true),
        Command::Sweep { common } => sweep(&common).map(|_| true),
        Command::Rates { common, d, alpha, n } => {
            if d.contains(&0) {
                bail!("d must be positive");
            }
            rates(&common, &d, &alpha, &n).map(|_| true)
        }
        Command::Equiv { common } => equiv(&common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
