use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{YardError, YardResult};
use crate::run::{resolve_out, run_experiment, summarize, summary_csv, summary_text};

#[derive(Debug, Parser)]
#[command(name = "decaylab", about = "Resolvent, cutoff and local-energy-decay experiments")]
struct Cli {
    /// Experiment config (TOML, schema 1)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides DECAYLAB_OUT and the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps (0 = default)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Check the Θ-profile conditions
    CheckTheta {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
    },
    /// Build the Gevrey cutoff and tabulate its derivative bounds
    BuildCutoff {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Free kernel against grid solves, Huygens and the d = 2 profile
    KernelVerify,
    /// Weighted resolvent derivative norms
    ResolventSweep,
    /// Born-series assembly against direct solves
    BornSeries,
    /// Limiting-absorption continuity check
    LapCheck,
    /// Wave propagation, local energy trace and decay fit
    WaveDecay,
    /// Aggregate run manifests under a directory
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Also write the summary table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn scenario_of(cmd: &Cmd) -> Option<Scenario> {
    Some(match cmd {
        Cmd::CheckTheta { .. } => Scenario::ThetaCheck,
        Cmd::BuildCutoff { .. } => Scenario::Cutoff,
        Cmd::KernelVerify => Scenario::KernelVerify,
        Cmd::ResolventSweep => Scenario::ResolventSweep,
        Cmd::BornSeries => Scenario::BornSeries,
        Cmd::LapCheck => Scenario::LapCheck,
        Cmd::WaveDecay => Scenario::WaveDecay,
        Cmd::Report { .. } => return None,
    })
}

fn execute(cli: Cli) -> YardResult<i32> {
    if let Cmd::Report { dir, csv } = &cli.cmd {
        if !dir.is_dir() {
            return Err(YardError::Usage(format!("{} is not a directory", dir.display())));
        }
        let rows = summarize(dir)?;
        if rows.is_empty() {
            return Err(YardError::Usage(format!("no manifests under {}", dir.display())));
        }
        print!("{}", summary_text(&rows));
        if let Some(path) = csv {
            std::fs::write(path, summary_csv(&rows)?)?;
        }
        return Ok(if rows.iter().all(|r| r.passed && r.artifacts_ok) { 0 } else { 1 });
    }
    let scenario = scenario_of(&cli.cmd).unwrap();
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.scenario != scenario {
                return Err(YardError::Usage(format!("config is for {}, not {}", cfg.scenario.name(), scenario.name())));
            }
            cfg
        }
        None => ExperimentConfig::default_for(scenario),
    };
    match &cli.cmd {
        Cmd::CheckTheta { s, c } => {
            if let Some(s) = s {
                cfg.profile.s = *s;
            }
            if let Some(c) = c {
                cfg.profile.c = *c;
            }
        }
        Cmd::BuildCutoff { s, k_max } => {
            if let Some(s) = s {
                cfg.profile.s = *s;
            }
            if let Some(k) = k_max {
                cfg.sweep.get_or_insert_with(|| ExperimentConfig::default_for(Scenario::Cutoff).sweep.unwrap()).k_max = *k;
            }
        }
        _ => {}
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = resolve_out(cli.out.as_deref(), &cfg)?;
    let manifest = decaylab_core::par::with_threads(cli.threads, || run_experiment(&cfg, &out))?;
    for c in &manifest.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &manifest.notes {
        println!("note: {n}");
    }
    println!("manifest: {}", out.join(crate::run::MANIFEST).display());
    Ok(if manifest.passed { 0 } else { 1 })
}

/// Parses argv and runs; returns the process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(parsed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
