//! Command-line front end: run one scenario, sweep α, or audit a run.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use slotlend::coloring;
use slotlend::engine::{self, World};
use slotlend::harness::{sweep, ScenarioConfig};
use slotlend::trace::{audit_borrowed_expiry, audit_single_winner, TraceSink};

#[derive(Parser)]
#[command(name = "slotlend", version, about = "Deterministic TDMA slot-lending simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Simulate {
        /// Scenario config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's lease aggressiveness α.
        #[arg(long)]
        alpha: Option<f64>,
        /// Disable lending (baseline mode), regardless of the config.
        #[arg(long)]
        baseline: bool,
        /// Write the event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also write the report into this directory as report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired baseline/lending replications across α values; writes the
    /// figure tables as CSV.
    Sweep {
        /// Scenario config file.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated α values.
        #[arg(long, default_value = "0.1,1,10")]
        alphas: String,
        /// Replications per α (default: the config's value).
        #[arg(long)]
        replications: Option<u32>,
        /// Output directory for CSVs and the summary.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario with full auditing and exit nonzero on any
    /// violation: slot collisions, borrowed transmissions outside a lease
    /// window, overlapping same-color leases within interference range, a
    /// broken slot coloring, or packets lost from the accounting.
    Verify {
        /// Scenario config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &PathBuf) -> Result<ScenarioConfig> {
    let cfg = ScenarioConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            seed,
            alpha,
            baseline,
            trace,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(alpha) = alpha {
                cfg.alpha = alpha;
            }
            if baseline {
                cfg.lending_enabled = false;
            }
            cfg.validate()?;
            let mut sink = match &trace {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent)?;
                    }
                    TraceSink::file(path)
                        .with_context(|| format!("opening trace file {}", path.display()))?
                }
                None => TraceSink::Null,
            };
            let report = engine::run_traced(&cfg, &mut sink)?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                report.save(&dir.join("report.txt"))?;
            }
            Ok(())
        }
        Command::Sweep {
            config,
            alphas,
            replications,
            out,
        } => {
            let cfg = load_config(&config)?;
            let alphas = parse_alphas(&alphas)?;
            let reps = replications.unwrap_or(cfg.replications);
            if reps == 0 {
                bail!("need at least one replication");
            }
            let report = sweep(&cfg, &alphas, reps)?;
            print!("{}", report.to_text());
            report.write_csvs(&out)?;
            std::fs::write(out.join("sweep.txt"), report.to_text())?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Verify { config, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            verify(&cfg)
        }
    }
}

fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let mut alphas = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let a: f64 = part
            .parse()
            .with_context(|| format!("bad alpha value `{part}`"))?;
        if !(a > 0.0 && a.is_finite()) {
            bail!("alpha must be positive and finite, got {a}");
        }
        alphas.push(a);
    }
    if alphas.is_empty() {
        bail!("no alpha values given");
    }
    Ok(alphas)
}

fn verify(cfg: &ScenarioConfig) -> Result<()> {
    let mut world = World::new(cfg)?;
    let mut sink = TraceSink::memory();
    while world.clock() < cfg.rounds {
        world.step(&mut sink)?;
    }
    let report = world.report();

    let mut failures = 0usize;
    let mut check = |name: &str, problems: Vec<String>| {
        if problems.is_empty() {
            println!("check {name}: ok");
        } else {
            failures += problems.len();
            println!("check {name}: FAIL ({} violations)", problems.len());
            for p in problems.iter().take(10) {
                println!("  {p}");
            }
            if problems.len() > 10 {
                println!("  ... and {} more", problems.len() - 10);
            }
        }
    };

    let coloring_problems = match coloring::verify_distance2(world.topology(), world.assignment())
    {
        Ok(violations) => violations.iter().map(|v| v.to_string()).collect(),
        Err(e) => vec![e.to_string()],
    };
    check("coloring-distance2", coloring_problems);

    let delta = world.topology().max_degree();
    let bound = delta * delta + 1;
    check(
        "chromatic-bound",
        if (world.chi() as usize) <= bound {
            vec![]
        } else {
            vec![format!("chi {} exceeds bound {bound}", world.chi())]
        },
    );

    check(
        "collisions",
        if report.collisions == 0 {
            vec![]
        } else {
            vec![format!("{} collision(s) audited", report.collisions)]
        },
    );

    check("borrowed-expiry", audit_borrowed_expiry(sink.records()));
    check(
        "single-winner",
        audit_single_winner(sink.records(), world.topology()),
    );

    let mut conservation = Vec::new();
    for n in &report.nodes {
        if n.sensed != n.flushed + n.dropped + n.residual {
            conservation.push(format!(
                "node {}: sensed {} != flushed {} + dropped {} + residual {}",
                n.id, n.sensed, n.flushed, n.dropped, n.residual
            ));
        }
    }
    check("packet-conservation", conservation);

    if failures > 0 {
        bail!("verification failed with {failures} violation(s)");
    }
    println!("all checks passed");
    Ok(())
}
