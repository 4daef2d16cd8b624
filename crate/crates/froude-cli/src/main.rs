use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use froude_core::harness::{
    audit_cancellations, limit_table, norms_table, resonance_table, run_sweep, simulate, write_csv, SimConfig,
};
use froude_core::solvers::write_checkpoint;
use froude_core::Error;

#[derive(Parser, Debug)]
#[command(name = "froude", version, about = "Stratified Boussinesq experiments on periodic boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files and checkpoints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Froude numbers; repeat to list several, `inf` for the limit alone.
    #[arg(long = "epsilon", global = true)]
    epsilons: Vec<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// One filtered run (first epsilon); writes the energy ledger and final state.
    Simulate,
    /// The limit system alone.
    Limit,
    /// Error against the limit across all epsilons.
    Sweep,
    /// Exact resonant wave triads of the lattice.
    Resonances,
    /// Structural identities of the limit forms.
    Audit,
    /// Dyadic block report of the initial data.
    Norms,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Geometry(_) | Error::InvalidArgument(_) => 2,
        Error::Audit(_) => 4,
        Error::Io { .. } | Error::Checkpoint { .. } => 1,
        _ => 3,
    }
}

fn load(cli: &Cli) -> froude_core::Result<SimConfig> {
    let mut c = match &cli.config {
        Some(p) => SimConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?,
        None => SimConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    if !cli.epsilons.is_empty() {
        c.epsilons = cli.epsilons.clone();
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> froude_core::Result<()> {
    let c = load(cli)?;
    let out = &c.out_dir;
    match cli.command {
        Command::Simulate => {
            let eps = c.epsilons[0];
            if eps.is_infinite() {
                return Err(Error::Config("simulate needs a finite epsilon".into()));
            }
            let (table, state) = simulate(&c, eps)?;
            write_csv(&table, &out.join("energy.csv"))?;
            write_checkpoint(&out.join("final.chk"), &state)?;
            let drift = table.rows.iter().filter_map(|r| r[3].parse::<f64>().ok()).fold(0.0, f64::max);
            println!("epsilon {eps:e}: t = {}, max energy drift {drift:e}", state.t);
        }
        Command::Limit => {
            let table = limit_table(&c)?;
            write_csv(&table, &out.join("limit.csv"))?;
            println!("limit system: {} snapshots", table.rows.len());
        }
        Command::Sweep => {
            let report = run_sweep(&c)?;
            write_csv(&report.table(), &out.join("sweep.csv"))?;
            for s in &report.summaries {
                match (&s.failure, s.max_error) {
                    (Some(f), _) => println!("epsilon {:e}: failed: {f}", s.epsilon),
                    (None, Some(e)) => println!(
                        "epsilon {:e}: max error {e:e}, max drift {:e}, {:.2?}",
                        s.epsilon,
                        s.max_drift.unwrap_or(f64::NAN),
                        s.elapsed
                    ),
                    _ => {}
                }
            }
            if let Some(r) = report.limit_residual {
                println!("limit self-residual {r:e}");
            }
            if report.summaries.iter().any(|s| s.failure.is_some()) {
                return Err(Error::Numerical {
                    t: c.t_end,
                    reason: "at least one run failed".into(),
                });
            }
        }
        Command::Resonances => {
            let table = resonance_table(&c.geometry()?)?;
            write_csv(&table, &out.join("resonances.csv"))?;
            println!("{} resonant triads", table.rows.len());
        }
        Command::Audit => {
            let report = audit_cancellations(&c)?;
            write_csv(&report.table(), &out.join("audit.csv"))?;
            for r in &report.rows {
                println!("{:<24} seed {:<4} {:.3e} {}", r.check, r.seed, r.residual, if r.passed() { "ok" } else { "FAIL" });
            }
            report.into_result()?;
        }
        Command::Norms => {
            let table = norms_table(&c)?;
            write_csv(&table, &out.join("norms.csv"))?;
            println!("{} dyadic blocks", table.rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
