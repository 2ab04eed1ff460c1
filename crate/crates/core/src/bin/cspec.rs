use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conformal_spectra::pipeline::{execute, output_dir, write_outputs, RunConfig};
use conformal_spectra::suites::{run_suite, SUITES};
use conformal_spectra::Error;

#[derive(Parser)]
#[command(name = "cspec", version, about = "Conformal eigenvalue maximization lab")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize, decompose, certify and write reports.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite: oracles, gradients, projection, endtoend-k1, endtoend-k2.
    Verify { suite: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cspec: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { config, out, seed } => run(config, out, seed),
        Command::Verify { suite } => verify(&suite),
    }
}

fn run(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let mut cfg = match RunConfig::from_path(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cspec: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = output_dir(&cfg, out.as_deref());
    let art = match execute(&cfg) {
        Ok(a) => a,
        Err(e @ Error::Configuration(_)) => {
            eprintln!("cspec: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("cspec: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_outputs(&art, &dir) {
        eprintln!("cspec: writing {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    let r = &art.report;
    for s in &r.stages {
        eprintln!(
            "stage {} cap {:>5}: lambda_{} = {:.6} pi after {} iterations ({})",
            s.stage, s.cap, r.k, s.best_over_pi, s.iterations, s.stop_reason
        );
    }
    if let Some(d) = &r.decomposition {
        eprintln!("atoms K = {}, regular area {:.4}", d.atom_count, d.regular_area);
    }
    eprintln!("report written to {}", dir.join("report.json").display());
    if r.status.completed {
        ExitCode::SUCCESS
    } else {
        eprintln!("cspec: run did not complete: {}", r.status.error.as_deref().unwrap_or("unknown"));
        ExitCode::from(1)
    }
}

fn verify(suite: &str) -> ExitCode {
    let Some(lines) = run_suite(suite) else {
        eprintln!("cspec: unknown suite {suite:?}; expected one of {}", SUITES.join(", "));
        return ExitCode::from(2);
    };
    println!("suite {suite}");
    for l in &lines {
        println!("{}", l.render());
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} passed", lines.len());
    if passed == lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
