use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use bard_conduct::service::CreateTrial;
use bard_conduct::Conduct;
use bard_core::config::DesignConfig;
use bard_core::stage2::Stage2Doses;

#[derive(clap::Args)]
pub struct ConductArgs {
    /// Data directory holding designs and trial logs.
    #[arg(long, env = "BARD_DATA_DIR", default_value = "bard-data")]
    dir: PathBuf,
    #[command(subcommand)]
    action: Action,
}

/// Dose indices are zero-based, as in the HTTP API.
#[derive(clap::Subcommand)]
enum Action {
    /// Start a trial from a preset or a JSON design file.
    Create {
        #[arg(long)]
        trial: Option<String>,
        #[arg(long, conflicts_with = "design")]
        preset: Option<String>,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enroll the next arrival.
    Enroll {
        trial: String,
        /// Levels of the balanced covariates, comma separated.
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<usize>,
        #[arg(long)]
        ineligible: bool,
    },
    /// Record a patient's DLT and, when known, response.
    Outcome {
        trial: String,
        #[arg(long)]
        patient: u32,
        #[arg(long, action = clap::ArgAction::Set)]
        dlt: bool,
        #[arg(long)]
        response: Option<bool>,
    },
    /// Close stage 1 and plan stage 2, optionally overriding the doses.
    Advance {
        trial: String,
        #[arg(long, requires = "high")]
        low: Option<usize>,
        #[arg(long)]
        high: Option<usize>,
    },
    /// Decision summary.
    Status { trial: String },
    /// Full state including patients.
    State { trial: String },
    /// OBD report, partial before completion.
    Report { trial: String },
    /// The event log.
    Events { trial: String },
    /// Trials in the data directory.
    List,
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

pub fn run(args: ConductArgs) -> Result<()> {
    let c = Conduct::open(&args.dir)?;
    match args.action {
        Action::Create { trial, preset, design, seed } => {
            let design = match design {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    let d: DesignConfig = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
                    Some(d)
                }
                None => None,
            };
            let preset = if design.is_none() { Some(preset.unwrap_or_else(|| "bard-boin".into())) } else { None };
            let view = c.create_trial(CreateTrial { trial_id: trial, design_id: None, design, preset, seed })?;
            print(&serde_json::json!({"trial_id": view.trial_id, "design_id": view.design_id, "seed": view.seed}))
        }
        Action::Enroll { trial, covariates, ineligible } => print(&c.enroll(&trial, &covariates, !ineligible)?),
        Action::Outcome { trial, patient, dlt, response } => print(&c.record_outcome(&trial, patient, dlt, response)?),
        Action::Advance { trial, low, high } => {
            let doses = high.map(|high| Stage2Doses { low, high });
            print(&c.advance(&trial, doses)?)
        }
        Action::Status { trial } => print(&c.summary(&trial)?),
        Action::State { trial } => print(&c.state(&trial)?),
        Action::Report { trial } => print(&c.report(&trial)?),
        Action::Events { trial } => print(&c.events(&trial)?),
        Action::List => print(&c.store().trial_ids()?),
    }
}
