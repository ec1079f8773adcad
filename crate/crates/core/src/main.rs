use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsihdg::cli::{
    parse_config_file, resolve_output_dir, run_checks, run_converge, run_pulse, run_single, Experiment, RunOptions,
};
use fsihdg::Error;

#[derive(Parser)]
#[command(name = "fsihdg", version, about = "Divergence-conforming HDG solver for linear fluid-structure interaction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Case configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; FSIHDG_OUT overrides it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter triples run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write the mesh as plain text.
    #[arg(long)]
    dump_mesh: bool,
    /// Also write the first assembled system in coordinate format.
    #[arg(long)]
    export_matrix: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study.
    Converge(RunArgs),
    /// Pressure-pulse channel benchmark.
    Pulse2d(RunArgs),
    /// One transient run with per-step diagnostics.
    Single(RunArgs),
    /// Invariant checks on a tiny mesh.
    Check,
}

fn run(expected: Experiment, args: &RunArgs) -> Result<(), Error> {
    let cfg = parse_config_file(&args.config)?;
    if cfg.experiment != expected {
        return Err(Error::Config(format!(
            "case.experiment is {:?} but the subcommand runs {:?}",
            cfg.experiment, expected
        )));
    }
    let opts = RunOptions {
        out: resolve_output_dir(args.out.as_deref(), &cfg),
        jobs: args.jobs.max(1),
        dump_mesh: args.dump_mesh,
        export_matrix: args.export_matrix,
    };
    match expected {
        Experiment::Converge => {
            let rows = run_converge(&cfg, &opts)?;
            println!("{:>3} {:>5} {:>10} {:>10} {:>10} {:>12} {:>6} {:>8}", "k", "1/h", "rho_s", "delta1", "delta2", "error", "eoc", "iters");
            for r in &rows {
                let eoc = r.eoc.map(|e| format!("{e:.2}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:>3} {:>5} {:>10.3e} {:>10.3e} {:>10.3e} {:>12.4e} {:>6} {:>8.1}",
                    r.k, r.n, r.rho_s, r.delta1, r.delta2, r.error, eoc, r.avg_iters
                );
            }
        }
        Experiment::Pulse2d => {
            let res = run_pulse(&cfg, &opts)?;
            println!(
                "{} steps, average MinRes iterations {:.1}",
                res.report.diagnostics.len(),
                res.report.average_iterations()
            );
        }
        Experiment::Single => {
            let s = run_single(&cfg, &opts)?;
            print!("n={} steps={} average MinRes iterations {:.1}", s.n, s.steps, s.average_iterations);
            match s.error {
                Some(e) => println!(" final L2 velocity error {e:.6e}"),
                None => println!(),
            }
        }
    }
    println!("output written to {}", opts.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expected, args) = match &cli.command {
        Command::Check => {
            let results = run_checks();
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            return if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
        Command::Converge(a) => (Experiment::Converge, a),
        Command::Pulse2d(a) => (Experiment::Pulse2d, a),
        Command::Single(a) => (Experiment::Single, a),
    };
    match run(expected, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
