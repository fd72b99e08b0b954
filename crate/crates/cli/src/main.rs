use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fujita_core::harness::{
    emit_report, load_config, run_blowup, run_certify, run_kernel_check, run_solve, run_sweep,
    BlowupTable, ExperimentConfig, Format,
};
use fujita_core::heat::KernelCurve;
use fujita_core::par;
use fujita_core::{Error, Result};

/// Numerical experiments for the Fujita dichotomy on Lie-group models.
#[derive(Debug, Parser)]
#[command(name = "fujita", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report format, `csv` or `json`; overrides `output.format`.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Worker threads for independent cells and inner loops.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Seed for randomized probes; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Heat-kernel decay slope and Gaussian envelope fit.
    KernelCheck,
    /// Global-existence certificates, plus abstract-profile bounds.
    Certify,
    /// Picard construction of the mild solution on [0, t_max].
    Solve,
    /// Direct integration with blow-up detection and the A_p monitor.
    Blowup,
    /// Full dichotomy sweep over the (p, ε, γ) grid.
    Sweep,
}

impl Command {
    fn stem(&self) -> &'static str {
        match self {
            Command::KernelCheck => "kernel_check",
            Command::Certify => "certify",
            Command::Solve => "solve",
            Command::Blowup => "blowup",
            Command::Sweep => "sweep",
        }
    }
}

/// Load the config and apply command-line overrides.
fn prepare(cli: &Cli) -> Result<(ExperimentConfig, PathBuf, Format)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Validation("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = &cli.format {
        cfg.output.format = f.parse()?;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let out = cfg.output.dir.clone();
    let format = cfg.output.format;
    Ok((cfg, out, format))
}

/// Returns the number of invariant violations found.
fn execute(cmd: &Command, cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<usize> {
    let stem = cmd.stem();
    match cmd {
        Command::KernelCheck => {
            let r = run_kernel_check(cfg)?;
            let path = emit_report(&r, out, stem, format)?;
            let curve = KernelCurve {
                samples: r.curve.clone(),
            };
            curve.write_csv(std::fs::File::create(out.join("kernel_curve.csv"))?)?;
            println!(
                "kernel-check: slope {:.4}, envelope ratio {:.4} (slack {}) -> {}",
                r.log_slope,
                r.bounds.violation_ratio,
                r.bounds.slack,
                if r.bounds.passed { "pass" } else { "fail" }
            );
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Certify => {
            let r = run_certify(cfg)?;
            let path = emit_report(&r, out, stem, format)?;
            for row in &r.rows {
                match &row.certificate {
                    Some(c) => println!(
                        "p={} eps={} gamma={}: {:?} (integral {:.6e}, threshold {:.6e})",
                        row.p, row.epsilon, row.gamma, c.verdict, c.integral, c.threshold
                    ),
                    None => println!("p={} eps={} gamma={}: {}", row.p, row.epsilon, row.gamma, row.status),
                }
            }
            for a in &r.abstract_certificates {
                println!(
                    "abstract p={} eps={} gamma={}: {:?} bound {:?}",
                    a.p, a.epsilon, a.gamma, a.verdict, a.bound
                );
            }
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Solve => {
            let r = run_solve(cfg, Some(out))?;
            let path = emit_report(&r, out, stem, format)?;
            for row in &r.rows {
                println!(
                    "p={} eps={} gamma={}: {}",
                    row.p,
                    row.epsilon,
                    row.gamma,
                    match &row.summary {
                        Some(s) => format!("converged in {} iterations, gap {:.3e}", s.iterations, s.residual),
                        None => row.status.clone(),
                    }
                );
            }
            println!("wrote {}", path.display());
            Ok(r.invariant_violations())
        }
        Command::Blowup => {
            let r = run_blowup(cfg)?;
            let path = emit_report(&r, out, stem, format)?;
            for row in &r.rows {
                if let Some(rep) = &row.report {
                    let trace = out.join(format!("{}.csv", BlowupTable::trace_stem(row)));
                    rep.write_trace_csv(std::fs::File::create(&trace)?)?;
                    println!(
                        "p={} eps={} gamma={}: {:?} ({:?}) T*={:?} t_end={}",
                        row.p, row.epsilon, row.gamma, rep.classification, rep.termination, rep.t_star, rep.t_end
                    );
                } else {
                    println!("p={} eps={} gamma={}: {}", row.p, row.epsilon, row.gamma, row.status);
                }
            }
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Sweep => {
            let r = run_sweep(cfg)?;
            let path = emit_report(&r, out, stem, format)?;
            for row in &r.rows {
                println!(
                    "p={} eps={} gamma={}: {:?} certificate={:?} status={}",
                    row.p, row.epsilon, row.gamma, row.classification, row.certificate, row.status
                );
            }
            println!("wrote {}", path.display());
            Ok(r.invariant_violations())
        }
    }
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
    let (cfg, out, format) = match prepare(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let start = Instant::now();
    let result = cfg
        .echo(&out)
        .and_then(|_| par::with_workers(cli.workers, || execute(&cli.command, &cfg, &out, format)));
    eprintln!("elapsed {:.2?}", start.elapsed());
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: {n} cell(s) violated a numerical invariant");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invariant_violation() { 2 } else { 1 })
        }
    }
}
