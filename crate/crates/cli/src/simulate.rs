use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};

use bard_core::config::{comparator_design, Comparator, DesignConfig, ScenarioConfig, SimConfig};
use bard_core::sim::{write_csv, write_trace, OcReport, OcRow, Simulator};

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// TOML configuration; flags override its fields.
    config: Option<PathBuf>,
    /// Design preset: bard-boin, bard-blrm, boin-sr, blrm-sr, optionally with -3.
    #[arg(long)]
    design: Option<String>,
    /// Scenario preset; repeat for several. Defaults to s1.
    #[arg(long)]
    scenario: Vec<String>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 for all cores. Results do not depend on it.
    #[arg(long)]
    parallelism: Option<usize>,
    /// bard, sr or pocock-simon-full.
    #[arg(long)]
    comparator: Option<Comparator>,
    /// Report file: `.json` for JSON, anything else for CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial results as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn print_table(rows: &[OcRow]) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<14} {:<8} {:>7} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "Design", "Scenario", "N", "Duration", "X1", "X2", "X3", "Alloc", "PCS1", "PCS2"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<14} {:<8} {:>7.2} {:>9.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            r.design,
            r.scenario,
            r.n,
            r.duration,
            r.imbalance_x1,
            r.imbalance_x2,
            r.imbalance_x3,
            r.imbalance_allocation,
            r.pcs1,
            r.pcs2
        )?;
    }
    Ok(())
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    let mut design_name = if args.config.is_some() { "config".to_string() } else { "bard-boin".to_string() };
    if let Some(name) = &args.design {
        cfg.design = DesignConfig::preset(name)?;
        design_name = name.clone();
    }
    if let Some(c) = args.comparator {
        cfg.run.comparator = c;
    }
    match cfg.run.comparator {
        Comparator::Bard => {}
        Comparator::Sr => design_name.push_str("+sr"),
        Comparator::PocockSimonFull => design_name.push_str("+ps"),
    }
    if cfg.run.comparator != Comparator::Bard {
        cfg.design = comparator_design(&cfg.design, cfg.run.comparator);
    }
    let reps = args.reps.unwrap_or(cfg.run.reps);
    let parallelism = args.parallelism.unwrap_or(cfg.run.parallelism);
    let seed = match args.seed.or(cfg.run.seed) {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s} (generated)");
            s
        }
    };
    let scenarios: Vec<ScenarioConfig> = if args.scenario.is_empty() {
        if cfg.scenario == ScenarioConfig::default() {
            cfg.scenario.preset = Some("s1".into());
        }
        vec![cfg.scenario.clone()]
    } else {
        args.scenario.iter().map(|p| ScenarioConfig { preset: Some(p.clone()), ..Default::default() }).collect()
    };

    let mut rows = Vec::new();
    let mut trace = match &args.trace {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| p.display().to_string())?)),
        None => None,
    };
    for sc in &scenarios {
        let truth = sc.resolve()?;
        let name = truth.name.clone();
        let sim = Simulator::new(cfg.design.clone(), truth, cfg.timing)?;
        let results = sim.run_many(reps, seed, parallelism, trace.is_some())?;
        if let Some(w) = trace.as_mut() {
            write_trace(w, &results)?;
        }
        rows.push(OcRow::new(&design_name, &name, &OcReport::aggregate(&results, seed)));
    }
    print_table(&rows)?;
    if let Some(path) = &args.out {
        let file = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_writer_pretty(file, &rows)?;
        } else {
            write_csv(file, &rows)?;
        }
    }
    Ok(())
}
