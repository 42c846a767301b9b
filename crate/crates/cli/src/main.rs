//! Command-line runner: solve the caching equilibrium, compare policies,
//! or export one of the named experiments, all from a key-value
//! configuration file with reproducible seeding.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when
//! the solver fails to converge (artifacts are still written).

mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use udcn_core::config::{load_config, serialize, ExperimentConfig};
use udcn_core::geometry::{mean_field_interference, spectral_efficiency};
use udcn_core::policy::{mf_policy_from_field, Policy};
use udcn_core::sim::experiments::{run_compare, run_experiment, ExperimentName};
use udcn_core::solver::{p_max, solve_mfe, MfeProblem};

use output::{config_digest, load_field, OutputWriter};

#[derive(Parser)]
#[command(
    name = "udcn",
    about = "Mean-field caching equilibrium solver and network simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Configuration file (key = value sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the root seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the equilibrium and write the value/distribution/policy fields.
    Solve,
    /// Estimate all policies' costs and the replication sweep.
    Compare {
        /// Directory holding a previous solve's policy.csv to reuse.
        #[arg(long)]
        mfe: Option<PathBuf>,
        /// Fail instead of solving inline when --mfe is absent.
        #[arg(long)]
        no_inline_solve: bool,
    },
    /// Export one named experiment: fig3, fig4, fig5 or fig6.
    Export { which: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap renders help/version through the same error path
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the thread pool")?;
    }
    let config_path = cli
        .config
        .as_deref()
        .context("--config <path> is required")?;
    let mut cfg = load_config(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.sim.root_seed = seed;
    }
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let canonical = serialize(&cfg);
    let digest = config_digest(&canonical);
    let writer = OutputWriter::new(&cli.out, cfg.sim.root_seed, digest)?;
    std::fs::write(cli.out.join("config_used.conf"), &canonical)
        .context("writing the effective configuration")?;

    match cli.cmd {
        Cmd::Solve => cmd_solve(&cfg, &writer),
        Cmd::Compare {
            mfe,
            no_inline_solve,
        } => cmd_compare(&cfg, &writer, mfe, no_inline_solve),
        Cmd::Export { which } => cmd_export(&cfg, &writer, &which),
    }
}

fn shared_se(cfg: &ExperimentConfig) -> Result<f64> {
    let ihat = mean_field_interference(&cfg.net)?;
    Ok(spectral_efficiency(&cfg.net, ihat)?)
}

fn cmd_solve(cfg: &ExperimentConfig, writer: &OutputWriter) -> Result<u8> {
    let started = Instant::now();
    let se = shared_se(cfg)?;
    let mut all_converged = true;
    let mut meta: Vec<(String, String)> = vec![
        ("spectral_efficiency".into(), output::fmt_num(se)),
        ("contents".into(), cfg.contents.len().to_string()),
    ];
    for (j, content) in cfg.contents.iter().enumerate() {
        let problem = MfeProblem {
            content,
            cache: &cfg.cache,
            se,
            kappa: cfg.kappa(),
            m0_q_mean: cfg.m0_mean,
            m0_q_std: cfg.m0_std,
        };
        let sol = solve_mfe(&problem, &cfg.grid, &cfg.solver)?;
        let suffix = if j == 0 { String::new() } else { format!("_c{j}") };
        writer.write_field(&format!("value{suffix}"), &sol.grid, &sol.value)?;
        writer.write_field(&format!("distribution{suffix}"), &sol.grid, &sol.distribution)?;
        writer.write_field(&format!("policy{suffix}"), &sol.grid, &sol.policy)?;
        let tag = |k: &str| format!("content{j}_{k}");
        meta.push((tag("converged"), sol.converged.to_string()));
        meta.push((tag("iterations"), sol.iterations.to_string()));
        meta.push((
            tag("residual_history"),
            sol.residual_history
                .iter()
                .map(|r| output::fmt_num(*r))
                .collect::<Vec<_>>()
                .join(";"),
        ));
        for d in &sol.diagnostics {
            meta.push((tag("diagnostic"), d.clone()));
        }
        all_converged &= sol.converged;
    }
    writer.write_meta("solve", &meta, started.elapsed().as_millis())?;
    if all_converged {
        Ok(0)
    } else {
        eprintln!("solver did not converge; artifacts written with the flag unset");
        Ok(2)
    }
}

fn cmd_compare(
    cfg: &ExperimentConfig,
    writer: &OutputWriter,
    mfe: Option<PathBuf>,
    no_inline_solve: bool,
) -> Result<u8> {
    let started = Instant::now();
    let mf_override: Option<Policy> = match mfe {
        Some(dir) => {
            let (ts, xs, qs, data) = load_field(&dir.join("policy.csv"))?;
            let pm = p_max(&cfg.contents[0], &cfg.cache);
            Some(mf_policy_from_field(ts, xs, qs, data, pm)?)
        }
        None if no_inline_solve => {
            anyhow::bail!("--no-inline-solve requires --mfe <dir> with a solved policy artifact")
        }
        None => None,
    };
    let tables = run_compare(cfg, mf_override)?;
    let mut meta: Vec<(String, String)> = Vec::new();
    for t in &tables {
        writer.write_table(t)?;
        for (k, v) in &t.metadata {
            meta.push((format!("{}_{k}", t.name), v.clone()));
        }
    }
    writer.write_meta("compare", &meta, started.elapsed().as_millis())?;
    Ok(0)
}

fn cmd_export(cfg: &ExperimentConfig, writer: &OutputWriter, which: &str) -> Result<u8> {
    let started = Instant::now();
    let name: ExperimentName = which
        .parse()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let tables = run_experiment(name, cfg)?;
    let mut meta: Vec<(String, String)> = vec![("experiment".into(), name.to_string())];
    for t in &tables {
        writer.write_table(t)?;
        for (k, v) in &t.metadata {
            meta.push((format!("{}_{k}", t.name), v.clone()));
        }
    }
    writer.write_meta(&name.to_string(), &meta, started.elapsed().as_millis())?;
    Ok(0)
}
