use clap::{Args, Parser, Subcommand};
use rothe_cli::config::{Mode, RunConfig};
use rothe_cli::io::read_json;
use rothe_cli::sweep::{diagnose, run_single, sweep};
use rothe_core::diagnostics::DiagnosticsReport;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rothe", version, about = "Rothe schemes for moving-domain flow and compactness diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Prescribed-motion Navier-Stokes run at the configured step.
    RunNs(RunArgs),
    /// Fluid-shell run at the configured step.
    RunFsi(RunArgs),
    /// Runs every level of a time-step family into a bundle directory.
    Sweep(RunArgs),
    /// Computes the diagnostics report of a bundle.
    Diagnose {
        #[arg(long)]
        bundle: PathBuf,
        /// Where to write the report (defaults to the bundle).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the pass/fail rows of a report.
    Report {
        /// Bundle directory or report.json.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(a: &RunArgs) -> rothe_core::Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(l) = a.levels {
        cfg.sweep.levels = l;
    }
    if let Some(j) = a.jobs {
        cfg.sweep.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rep: &DiagnosticsReport) -> ExitCode {
    for r in &rep.rows {
        println!("{} {}: {} [{}]", if r.passed { "PASS" } else { "FAIL" }, r.id, r.measured, r.description);
    }
    for e in &rep.errors {
        eprintln!("error: {e}");
    }
    if rep.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> rothe_core::Result<ExitCode> {
    match cli.cmd {
        Cmd::RunNs(a) => single(&a, Mode::Ns),
        Cmd::RunFsi(a) => single(&a, Mode::Fsi),
        Cmd::Sweep(a) => {
            let cfg = load(&a)?;
            let m = sweep(&cfg, &a.out)?;
            for l in &m.levels {
                match &l.error {
                    None => println!("level {} dt {} steps {}: ok", l.index, l.dt, l.steps),
                    Some(e) => println!("level {} dt {} steps {}: failed: {e}", l.index, l.dt, l.steps),
                }
            }
            println!("bundle {} ({})", a.out.display(), m.config_hash);
            Ok(if m.levels.iter().all(|l| l.ok) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Diagnose { bundle, out } => {
            let rep = diagnose(&bundle, out.as_deref())?;
            Ok(print_rows(&rep))
        }
        Cmd::Report { path } => {
            let p = if path.is_dir() { path.join("report.json") } else { path };
            let rep: DiagnosticsReport = read_json(&p)?;
            Ok(print_rows(&rep))
        }
    }
}

fn single(a: &RunArgs, mode: Mode) -> rothe_core::Result<ExitCode> {
    let cfg = load(a)?;
    if cfg.mode != mode {
        return Err(rothe_core::Error::Config(format!("mode: config is for {:?}", cfg.mode)));
    }
    let level = run_single(&cfg, &a.out)?;
    let tol = cfg.diagnostics.tolerances.energy_slack;
    let s = level.summary.worst_slack;
    let ok = s >= -tol;
    println!(
        "{} energy: worst relative slack {s:.3e} over {} steps of dt {} (written to {})",
        if ok { "PASS" } else { "FAIL" },
        level.steps(),
        level.dt,
        display(&a.out)
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
