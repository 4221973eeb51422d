use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use swarm_core::compare::{compare, VariantFile};
use swarm_core::runner::{run, RunError};
use swarm_core::scenario::{
    data_locality, heavy_churn, partition_heal, self_healing, steady_state, ChurnShape, ScenarioConfig,
};
use swarm_core::sim::Trace;

#[derive(Parser)]
#[command(name = "swarm", version, about = "Run and compare swarm-computing simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes metrics.csv and trace.jsonl into the output directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every variant over the same seeds and tabulate means and paired differences.
    Compare {
        config: PathBuf,
        #[arg(long)]
        variants: PathBuf,
        /// Comma-separated seeds or inclusive ranges, e.g. `1..20` or `1,4,9`.
        #[arg(long)]
        seeds: String,
        /// Writes means.csv and differences.csv here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario without running it.
    Validate { config: PathBuf },
    /// Print a reference scenario.
    Generate {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Node count for heavy-churn.
        #[arg(long, default_value_t = 32)]
        nodes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SteadyState,
    HeavyChurn,
    PartitionHeal,
    DataLocality,
    SelfHealing,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, out, seed } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            run_to(&cfg, &out)?;
        }
        Command::Compare {
            config,
            variants,
            seeds,
            out,
        } => {
            let cfg = load(&config)?;
            let text = read(&variants)?;
            let file = VariantFile::from_toml(&text).with_context(|| variants.display().to_string())?;
            let seeds = parse_seeds(&seeds)?;
            let c = compare(&cfg, &file.variants, &seeds)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    write(&dir.join("means.csv"), &c.means_csv())?;
                    write(&dir.join("differences.csv"), &c.differences_csv())?;
                }
                None => {
                    print!("{}", c.means_csv());
                    println!();
                    print!("{}", c.differences_csv());
                }
            }
        }
        Command::Validate { config } => {
            let text = read(&config)?;
            let cfg = ScenarioConfig::from_toml(&text).with_context(|| config.display().to_string())?;
            let errors = cfg.validate();
            if !errors.is_empty() {
                for e in &errors {
                    println!("{e}");
                }
                eprintln!("{}: {} violation(s)", config.display(), errors.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("ok");
        }
        Command::Generate { kind, seed, nodes } => {
            let cfg = match kind {
                Kind::SteadyState => steady_state(seed),
                Kind::HeavyChurn => {
                    if nodes < 4 {
                        bail!("heavy-churn needs at least 4 nodes");
                    }
                    heavy_churn(nodes, seed, ChurnShape::default())
                }
                Kind::PartitionHeal => partition_heal(seed),
                Kind::DataLocality => data_locality(seed),
                Kind::SelfHealing => self_healing(seed),
            };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = read(path)?;
    ScenarioConfig::load(&text).with_context(|| path.display().to_string())
}

fn run_to(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let trace_path = out.join("trace.jsonl");
    let file = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    let result = match run(cfg, Trace::to_writer(Box::new(BufWriter::new(file)))) {
        Ok(r) => r,
        Err(e @ RunError::Sim(_)) => {
            return Err(anyhow::Error::new(e).context(format!("run aborted; trace so far in {}", trace_path.display())))
        }
        Err(e) => return Err(e.into()),
    };
    let mut trace = result.trace;
    trace.flush().context("writing trace")?;
    let metrics_path = out.join("metrics.csv");
    let mut f = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    f.write_all(result.metrics.to_csv().as_bytes())?;
    Ok(())
}

/// `1..20` is inclusive; items are comma-separated.
fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (u64, u64) = (
                a.parse().with_context(|| format!("bad seed {a:?}"))?,
                b.parse().with_context(|| format!("bad seed {b:?}"))?,
            );
            if a > b {
                bail!("empty seed range {part}");
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}
