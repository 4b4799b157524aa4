use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfmimo::eval::{
    results_csv, run_generalization, run_property_suite, run_sweep, timing_csv, transfer_csv, ExperimentSpec, SuiteSize,
};
use cfmimo::sim::binio::write_channels;
use cfmimo::sim::{ChannelSet, LinkParams, SystemConfig};
use cfmimo::solvers::{dsatur_tabu_wmmse, oracle_baseline};
use cfmimo::train::{curve_csv, generate_dataset, train, PolicyCheckpoint, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cfmimo", version, about = "Cell-free MIMO pilot and power optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a topology and channels and dump them in the binary format.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a classical baseline on one drawn frame.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a DTS or STS policy.
    Train {
        #[arg(long, value_enum)]
        variant: TrainVariant,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Experiments and the property suite.
    Eval {
        #[arg(value_enum)]
        mode: EvalMode,
        /// Experiment spec; optional for `properties`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the property suite.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    #[value(name = "dsatur-tabu-wmmse")]
    DsaturTabuWmmse,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainVariant {
    Dts,
    Sts,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Sweep,
    Generalize,
    Properties,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn system_config(path: &Path) -> Result<SystemConfig> {
    let cfg: SystemConfig = serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn save_trained(dir: &Path, trained: &[(String, PolicyCheckpoint)]) -> Result<()> {
    for (key, ck) in trained {
        let name: String = key.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect();
        write(&dir.join("checkpoints").join(format!("{name}.json")), &serde_json::to_string(ck)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = system_config(&config)?;
            let (_, ch) = ChannelSet::<f64>::generate(&cfg, seed)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_channels(&ch, BufWriter::new(file))?;
            println!("M={} K={} N={} N_T={} -> {}", ch.m(), ch.k(), ch.n(), ch.n_t(), out.display());
        }
        Command::Baseline { config, seed, algo, out } => {
            let cfg = system_config(&config)?;
            let params = LinkParams::from_config(&cfg);
            let (_, ch) = ChannelSet::<f64>::generate(&cfg, seed)?;
            let result = match algo {
                Algo::DsaturTabuWmmse => dsatur_tabu_wmmse(&ch, &params)?,
                Algo::Oracle => oracle_baseline(&ch, &params)?,
            };
            write(&out, &serde_json::to_string_pretty(&result)?)?;
            println!("{}: tau_p={} eta={:.4} bps/Hz", result.algo, result.tau_p, result.eta_avg);
        }
        Command::Train { variant, config, train_seed, epochs, out, curve } => {
            let mut cfg: TrainConfig =
                serde_json::from_str(&read(&config)?).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = train_seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let mut data = generate_dataset::<f64>(&cfg.system, cfg.n_train, cfg.seed)?;
            let outcome = train(&cfg, matches!(variant, TrainVariant::Dts), &mut data)?;
            write(&out, &serde_json::to_string(&outcome.policy.to_checkpoint())?)?;
            if let Some(path) = curve {
                write(&path, &curve_csv(&outcome.curve))?;
            }
            if let Some(last) = outcome.curve.last() {
                println!("{} steps, final loss {:.4}, soft net SE {:.4}, soft tau_p {:.3}", outcome.curve.len(), last.loss, last.net_se, last.tau_p);
            }
        }
        Command::Eval { mode, spec, out, seed } => {
            fs::create_dir_all(&out)?;
            let load_spec = || -> Result<(ExperimentSpec, PathBuf)> {
                let Some(path) = &spec else { bail!("--spec is required for this mode") };
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((ExperimentSpec::from_json(&read(path)?)?, base))
            };
            match mode {
                EvalMode::Sweep => {
                    let (spec, base) = load_spec()?;
                    let result = run_sweep(&spec, &base)?;
                    write(&out.join("results.csv"), &results_csv(&result.rows))?;
                    write(&out.join("timing.csv"), &timing_csv(&result.rows))?;
                    save_trained(&out, &result.trained)?;
                    for r in &result.rows {
                        println!(
                            "{:<24} {}={:<6} eta {:8.4} +- {:7.4}  tau_p {:5.2}  {:.3}s",
                            r.method.to_string(),
                            r.variable,
                            r.value.to_string(),
                            r.eta_mean,
                            r.eta_std,
                            r.tau_p_mean,
                            r.seconds
                        );
                    }
                }
                EvalMode::Generalize => {
                    let (spec, base) = load_spec()?;
                    let result = run_generalization(&spec, &base)?;
                    write(&out.join("generalization.csv"), &transfer_csv(&result.rows))?;
                    save_trained(&out, &result.trained)?;
                    for r in &result.rows {
                        println!("{:<24} {}={:<6} ratio {:6.2}%", r.method.to_string(), r.variable, r.value.to_string(), r.ratio_percent);
                    }
                }
                EvalMode::Properties => {
                    let report = run_property_suite(seed, SuiteSize::default())?;
                    write(&out.join("properties.json"), &serde_json::to_string_pretty(&report)?)?;
                    for c in &report.checks {
                        println!("{} {:<36} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                    if !report.all_passed() {
                        return Ok(ExitCode::FAILURE);
                    }
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
