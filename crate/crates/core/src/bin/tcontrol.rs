use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use transport_control::cli::{self, CheckSelection, Command, Overrides, RunConfig, EXIT_USAGE};

/// Optimal control of the Poisson equation with a transport-distance prior.
#[derive(Parser, Debug)]
#[command(name = "tcontrol", version)]
struct Args {
    /// solve | verify | example-annulus | example-sparsity | ot
    command: String,
    /// JSON run config; for `verify`, the report.json of a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frank–Wolfe gap tolerance (relative to 1 + |objective|).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// all, none or a comma list of: certificate, rays, curvature, map,
    /// state_bounds, sparsity, density.
    #[arg(long, default_value = "all")]
    check: String,
}

fn execute(args: &Args) -> transport_control::Result<i32> {
    let command = Command::parse(&args.command)?;
    let checks = CheckSelection::parse(&args.check)?;
    let overrides = Overrides { out: args.out.clone(), tol: args.tol, max_iter: args.max_iter };
    let outcome = if command == Command::Verify {
        let path = args.config.as_ref().ok_or_else(|| transport_control::Error::Parse("verify needs --config <report.json>".into()))?;
        cli::verify(path, &overrides, &checks)?
    } else {
        let cfg = match &args.config {
            Some(path) => cli::parse_config(path)?,
            None if matches!(command, Command::ExampleAnnulus | Command::ExampleSparsity) => RunConfig::default(),
            None => return Err(transport_control::Error::Parse(format!("`{}` needs --config <path>", args.command))),
        };
        cli::run(command, &cfg, &overrides, &checks)?
    };
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("output: {}", outcome.out_dir.display());
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
