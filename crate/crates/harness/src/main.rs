//! `scatternet` command line: run one experiment, `verify`, or `all`.

use std::path::PathBuf;
use std::process::{Command, ExitCode};

use anyhow::{bail, Context};
use clap::Parser;
use scatternet_harness::checks::format_report;
use scatternet_harness::config::default_output_root;
use scatternet_harness::experiments;
use scatternet_harness::{Check, ExperimentConfig, ExperimentId};

#[derive(Debug, Parser)]
#[command(name = "scatternet", version, about = "Scattering-picture experiments and verification")]
struct Cli {
    /// Experiment id (envelope, fringes, kernel-compare, train-cnn,
    /// train-rbm, verify) or `all`.
    experiment: String,
    /// Seed; defaults to the experiment's documented seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; artifacts go to `<out>/<experiment>/`. Defaults to
    /// `$SCATTERNET_OUT` or `./scatternet-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Numeric parameter override, `key=value`; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// With `all`: run experiments as parallel child processes.
    #[arg(long)]
    parallel: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let out = cli.out.clone().unwrap_or_else(default_output_root);
    if cli.experiment == "all" {
        if !cli.params.is_empty() {
            bail!("--param applies to a single experiment, not `all`");
        }
        return run_all(&cli, &out);
    }
    let id: ExperimentId = cli.experiment.parse()?;
    let mut cfg = ExperimentConfig::new(id, &out);
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    for p in &cli.params {
        cfg.apply(p)?;
    }
    let outcome = experiments::run(&cfg)?;
    print!("{}", format_report(&outcome.checks));
    for path in &outcome.artifacts {
        log::info!("artifact {}", path.display());
    }
    Ok(outcome.passed())
}

/// Every experiment except `verify` (which already reruns them all).
fn run_all(cli: &Cli, out: &std::path::Path) -> anyhow::Result<bool> {
    let ids = ExperimentId::ALL.into_iter().filter(|&id| id != ExperimentId::Verify);
    if !cli.parallel {
        let mut checks: Vec<Check> = Vec::new();
        for id in ids {
            let mut cfg = ExperimentConfig::new(id, out);
            if let Some(seed) = cli.seed {
                cfg = cfg.with_seed(seed);
            }
            checks.extend(experiments::run(&cfg)?.checks);
        }
        print!("{}", format_report(&checks));
        return Ok(checks.iter().all(|c| c.passed));
    }

    // one child per experiment; each writes only under its own directory
    let exe = std::env::current_exe().context("locating the scatternet binary")?;
    let children = ids
        .map(|id| {
            let mut cmd = Command::new(&exe);
            cmd.arg(id.name()).arg("--out").arg(out);
            if let Some(seed) = cli.seed {
                cmd.arg("--seed").arg(seed.to_string());
            }
            let child = cmd.spawn().with_context(|| format!("spawning {id}"))?;
            Ok((id, child))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut ok = true;
    for (id, mut child) in children {
        let status = child.wait().with_context(|| format!("waiting for {id}"))?;
        if !status.success() {
            log::error!("{id} exited with {status}");
            ok = false;
        }
    }
    Ok(ok)
}
