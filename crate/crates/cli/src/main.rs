//! `bard`: simulate designs, print decision boundaries, conduct trials from
//! local event logs, and serve the HTTP API.

mod conduct;
mod simulate;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bard", version, about = "Two-stage dose-optimization trials: simulation and conduct")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate operating characteristics by simulation.
    Simulate(simulate::SimulateArgs),
    /// Print the BOIN decision table.
    Boundaries(BoundariesArgs),
    /// Conduct a trial against local event logs.
    Conduct(conduct::ConductArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(clap::Args)]
struct BoundariesArgs {
    /// Target DLT rate.
    #[arg(long, default_value_t = 0.25)]
    phi: f64,
    /// Largest number of evaluated patients shown.
    #[arg(long, default_value_t = 12)]
    ncap: u32,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, env = "BARD_DATA_DIR", default_value = "bard-data")]
    data_dir: PathBuf,
    /// Require `Authorization: Bearer <token>` on every request.
    #[arg(long, env = "BARD_API_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

fn boundaries(args: &BoundariesArgs) -> Result<()> {
    let p = bard_core::boin::BoinParams::new(args.phi)?;
    let rows = bard_core::boin::decision_table(&p, args.ncap);
    let mut out = io::stdout().lock();
    if args.json {
        let doc = serde_json::json!({"phi": p.phi, "lambda_e": p.lambda_e, "lambda_d": p.lambda_d, "rows": rows});
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        return Ok(());
    }
    writeln!(out, "phi = {}  lambda_e = {:.3}  lambda_d = {:.3}", p.phi, p.lambda_e, p.lambda_d)?;
    writeln!(out, "{:>4}  {:>12}  {:>15}  {:>12}", "n", "escalate y<=", "de-escalate y>=", "eliminate y>=")?;
    let opt = |v: Option<u32>| v.map_or("-".to_string(), |v| v.to_string());
    for r in rows {
        writeln!(out, "{:>4}  {:>12}  {:>15}  {:>12}", r.n, r.escalate_max, opt(r.deescalate_min), opt(r.eliminate_min))?;
    }
    Ok(())
}

fn scenarios() -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{:<6} {:<34} {:<34} {:>4} {:>4}", "name", "DLT rates", "marginal efficacy", "MTD", "OBD")?;
    for name in bard_core::scenario::preset_names() {
        let s = bard_core::scenario::ScenarioTruth::preset(name)?;
        let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
        let eff = (0..s.dose_count()).map(|j| s.marginal_efficacy(j)).collect();
        writeln!(
            out,
            "{:<6} {:<34} {:<34} {:>4} {:>4}",
            name,
            fmt(s.dlt_rates.clone()),
            fmt(eff),
            s.true_mtd + 1,
            s.true_obd + 1
        )?;
    }
    writeln!(out, "(doses numbered from 1)")?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let conduct = std::sync::Arc::new(bard_conduct::Conduct::open(&args.data_dir)?);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on {} with data in {}", args.addr, args.data_dir.display());
    rt.block_on(bard_conduct::http::serve(conduct, args.token, &args.addr))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Boundaries(a) => boundaries(&a),
        Command::Conduct(a) => conduct::run(a),
        Command::Serve(a) => serve(a),
        Command::Scenarios => scenarios(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
