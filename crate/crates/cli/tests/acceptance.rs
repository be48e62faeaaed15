//! Acceptance report: one PASS/FAIL line per criterion, with the cells behind
//! each verdict indented below it. Exits zero unless `ACCEPTANCE_STRICT` is
//! set, so an honest miss is reported without breaking the build.

use std::process::{Command, ExitCode};
use std::time::Instant;

use bard_conduct::service::CreateTrial;
use bard_conduct::{Conduct, TrialState};
use bard_core::blrm::{blrm_decision, rigidity_probe, BlrmDesign, BlrmParams};
use bard_core::boin::boin_boundaries;
use bard_core::config::{DesignConfig, TimingModel};
use bard_core::decision::Decision;
use bard_core::minimization::{Arm, ArmCounts, CovariateSpec, Minimizer};
use bard_core::obd::{true_utility, UtilityTable};
use bard_core::scenario::ScenarioTruth;
use bard_core::sim::{OcReport, PatientRecord, Simulator, TrialResult};
use bard_core::stats::{beta_tail, pava, BetaPosterior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde_json::Value;

const SEED: u64 = 20_240_917;

struct Cell {
    label: String,
    got: f64,
    want: f64,
    tol: f64,
}

impl Cell {
    fn new(label: impl Into<String>, got: f64, want: f64, tol: f64) -> Self {
        Self { label: label.into(), got, want, tol }
    }

    fn ok(&self) -> bool {
        (self.got - self.want).abs() <= self.tol + 1e-9
    }
}

#[derive(Default)]
struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn verdict(&mut self, name: &str, ok: bool, started: Instant, lines: &[String]) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag}  {name}  [{:.1} s]", started.elapsed().as_secs_f64());
        for l in lines {
            println!("        {l}");
        }
    }

    fn cells(&mut self, name: &str, started: Instant, cells: &[Cell]) {
        let lines: Vec<String> = cells
            .iter()
            .map(|c| {
                let mark = if c.ok() { "ok  " } else { "MISS" };
                format!("{mark} {:<28} {:>9.4}  target {:>9.4} +/- {}", c.label, c.got, c.want, c.tol)
            })
            .collect();
        self.verdict(name, cells.iter().all(Cell::ok), started, &lines);
    }
}

fn sim(design: &str, scenario: &str) -> Simulator {
    Simulator::new(DesignConfig::preset(design).unwrap(), ScenarioTruth::preset(scenario).unwrap(), TimingModel::default())
        .unwrap()
}

fn oc(design: &str, scenario: &str, reps: u32) -> OcReport {
    sim(design, scenario).replicate(reps, SEED, 0).unwrap()
}

fn boundaries(report: &mut Report) {
    let t = Instant::now();
    let (e, d) = boin_boundaries(0.25).unwrap();
    let round3 = |x: f64| (x * 1000.0).round() / 1000.0;
    report.cells(
        "boundary reproduction (phi = 0.25, 3 decimals)",
        t,
        &[Cell::new("lambda_e", round3(e), 0.197, 0.0), Cell::new("lambda_d", round3(d), 0.298, 0.0)],
    );
}

const EFFICACY: [(&str, &[f64], &[f64]); 12] = [
    ("s1", &[0.181, 0.349, 0.439, 0.519, 0.596], &[38.6, 45.2, 44.4, 46.6, 48.7]),
    ("s2", &[0.152, 0.181, 0.349, 0.439, 0.519], &[39.3, 38.6, 45.2, 44.0, 40.9]),
    ("s3", &[0.103, 0.152, 0.181, 0.349, 0.439], &[36.6, 38.6, 39.3, 45.2, 45.2]),
    ("s4", &[0.046, 0.103, 0.152, 0.181, 0.349], &[32.6, 35.6, 38.0, 38.9, 45.2]),
    ("s5", &[0.349, 0.349, 0.359, 0.359, 0.359], &[50.0, 45.2, 39.5, 36.9, 34.7]),
    ("s6", &[0.181, 0.349, 0.349, 0.359, 0.359], &[41.3, 50.0, 45.2, 39.1, 31.7]),
    ("s7", &[0.152, 0.181, 0.349, 0.349, 0.359], &[40.0, 40.6, 50.8, 45.2, 40.3]),
    ("s8", &[0.103, 0.152, 0.181, 0.349, 0.349], &[36.6, 39.0, 39.9, 50.4, 45.2]),
    ("s3d1", &[0.181, 0.349, 0.439], &[38.6, 45.2, 44.4]),
    ("s3d2", &[0.152, 0.181, 0.349], &[39.3, 38.6, 45.2]),
    ("s3d3", &[0.349, 0.349, 0.359], &[50.0, 45.2, 39.5]),
    ("s3d4", &[0.181, 0.349, 0.349], &[41.3, 50.0, 45.2]),
];

fn truth_model(report: &mut Report) {
    let t = Instant::now();
    let utility = UtilityTable::default();
    let mut cells = Vec::new();
    for (name, eff, util) in EFFICACY {
        let s = ScenarioTruth::preset(name).unwrap();
        for j in 0..s.dose_count() {
            let pe = s.marginal_efficacy(j);
            cells.push(Cell::new(format!("{name} d{} efficacy", j + 1), pe, eff[j], 0.001));
            cells.push(Cell::new(format!("{name} d{} utility", j + 1), true_utility(s.dlt_rates[j], pe, &utility), util[j], 0.1));
        }
    }
    let misses: Vec<&Cell> = cells.iter().filter(|c| !c.ok()).collect();
    let mut lines = vec![format!("{} cells, {} outside tolerance", cells.len(), misses.len())];
    lines.extend(misses.iter().map(|c| format!("MISS {} {:.4} vs {:.4}", c.label, c.got, c.want)));
    report.verdict("truth model (efficacy +/- 0.001, utility +/- 0.1)", misses.is_empty(), t, &lines);
}

fn rigidity(report: &mut Report) {
    let t = Instant::now();
    let d = BlrmDesign::new(BlrmParams::default()).unwrap();
    let pod = rigidity_probe(&d, &[(0, 3), (0, 6), (2, 3)]).unwrap();
    let probs = d.interval_probs(&[(0, 3), (0, 24), (2, 3), (0, 0), (0, 0)]).unwrap();
    let decision = blrm_decision(&probs, 1, d.params.eta);
    let stay = Cell::new("Stay at d2 with 0/24 (1 = yes)", f64::from(u8::from(decision == Decision::Stay)), 1.0, 0.0);
    report.cells("BLRM rigidity probe", t, &[Cell::new("POD of d3 after 0/3, 0/6, 2/3", pod, 0.626, 0.02), stay]);
}

/// Published rows: N, duration, X1, X2, allocation, PCS1, PCS2.
const REFERENCE_OC: [(&str, &str, [f64; 7]); 32] = [
    ("s1", "bard-boin", [39.37, 17.75, 4.50, 4.52, 0.99, 51.43, 48.44]),
    ("s1", "boin-sr", [51.79, 23.62, 12.51, 12.54, 0.0, 49.84, 48.37]),
    ("s2", "bard-boin", [48.62, 20.87, 4.16, 4.12, 0.87, 49.79, 47.55]),
    ("s2", "boin-sr", [63.06, 28.33, 12.55, 12.58, 0.0, 50.55, 49.06]),
    ("s3", "bard-boin", [53.42, 22.40, 3.80, 3.77, 0.76, 51.51, 47.71]),
    ("s3", "boin-sr", [65.52, 29.76, 12.39, 12.48, 0.0, 51.06, 48.20]),
    ("s4", "bard-boin", [53.49, 22.86, 3.28, 3.32, 0.65, 50.16, 47.01]),
    ("s4", "boin-sr", [64.71, 29.40, 12.51, 12.47, 0.0, 47.70, 45.48]),
    ("s5", "bard-boin", [39.43, 17.34, 4.72, 4.80, 1.06, 69.74, 71.76]),
    ("s5", "boin-sr", [51.79, 23.62, 12.51, 12.54, 0.0, 67.23, 67.22]),
    ("s6", "bard-boin", [48.95, 20.60, 4.28, 4.25, 0.91, 62.92, 63.60]),
    ("s6", "boin-sr", [63.06, 28.33, 12.55, 12.58, 0.0, 59.14, 60.57]),
    ("s7", "bard-boin", [54.32, 22.17, 3.91, 3.89, 0.79, 57.78, 61.57]),
    ("s7", "boin-sr", [65.52, 29.76, 12.39, 12.48, 0.0, 54.71, 57.64]),
    ("s8", "bard-boin", [55.15, 22.64, 3.37, 3.40, 0.67, 62.80, 65.35]),
    ("s8", "boin-sr", [64.71, 29.40, 12.51, 12.47, 0.0, 62.60, 65.73]),
    ("s1", "bard-blrm", [32.26, 15.35, 7.53, 7.54, 2.44, 46.93, 44.16]),
    ("s1", "blrm-sr", [44.15, 20.6, 12.49, 12.50, 0.0, 43.11, 41.88]),
    ("s2", "bard-blrm", [44.14, 19.73, 6.33, 6.32, 1.85, 31.39, 30.60]),
    ("s2", "blrm-sr", [59.97, 27.09, 12.43, 12.52, 0.0, 30.98, 29.87]),
    ("s3", "bard-blrm", [50.07, 22.00, 6.26, 6.25, 2.01, 32.74, 30.68]),
    ("s3", "blrm-sr", [64.96, 29.84, 12.52, 12.50, 0.0, 29.26, 27.63]),
    ("s4", "bard-blrm", [50.92, 22.69, 5.05, 5.05, 1.44, 30.97, 29.47]),
    ("s4", "blrm-sr", [65.21, 30.03, 12.63, 12.41, 0.0, 29.59, 28.22]),
    ("s5", "bard-blrm", [32.36, 14.92, 7.68, 7.63, 2.44, 52.86, 54.97]),
    ("s5", "blrm-sr", [44.15, 20.59, 12.69, 12.66, 0.0, 52.11, 52.18]),
    ("s6", "bard-blrm", [44.35, 19.43, 6.50, 6.49, 1.92, 67.51, 67.18]),
    ("s6", "blrm-sr", [59.97, 27.10, 12.52, 12.57, 0.0, 64.63, 66.13]),
    ("s7", "bard-blrm", [50.88, 21.72, 6.39, 6.38, 2.05, 60.30, 63.31]),
    ("s7", "blrm-sr", [64.96, 29.84, 12.52, 12.61, 0.0, 56.75, 60.83]),
    ("s8", "bard-blrm", [52.34, 22.35, 5.11, 5.11, 1.47, 52.66, 54.70]),
    ("s8", "blrm-sr", [65.21, 30.03, 12.44, 12.64, 0.0, 50.11, 53.16]),
];

fn oc_boin(report: &mut Report) -> Option<OcReport> {
    let t = Instant::now();
    let mut cells = Vec::new();
    let mut s1 = None;
    for (scenario, design, row) in REFERENCE_OC.iter().filter(|r| r.1.contains("boin")) {
        let r = oc(design, scenario, 30_000);
        let tag = |m: &str| format!("{scenario} {design} {m}");
        cells.push(Cell::new(tag("N"), r.mean_n, row[0], 1.0));
        cells.push(Cell::new(tag("duration"), r.mean_duration, row[1], 2.0));
        cells.push(Cell::new(tag("imbalance X1"), r.imbalance[0], row[2], 1.0));
        cells.push(Cell::new(tag("imbalance X2"), r.imbalance[1], row[3], 1.0));
        cells.push(Cell::new(tag("allocation"), r.allocation_imbalance, row[4], 0.3));
        cells.push(Cell::new(tag("PCS1"), r.pcs1, row[5], 2.0));
        cells.push(Cell::new(tag("PCS2"), r.pcs2, row[6], 2.0));
        if *scenario == "s1" && *design == "bard-boin" {
            s1 = Some(r);
        }
    }
    report.cells("operating characteristics, BARD-BOIN and BOIN-SR, 8 scenarios, 30000 reps", t, &cells);
    s1
}

fn oc_blrm(report: &mut Report) {
    let t = Instant::now();
    let mut cells = Vec::new();
    for (scenario, design, row) in REFERENCE_OC.iter().filter(|r| r.1.contains("blrm")) {
        let r = oc(design, scenario, 2_000);
        let tag = |m: &str| format!("{scenario} {design} {m}");
        cells.push(Cell::new(tag("N"), r.mean_n, row[0], 2.0));
        cells.push(Cell::new(tag("PCS1"), r.pcs1, row[5], 3.5));
        cells.push(Cell::new(tag("PCS2"), r.pcs2, row[6], 3.5));
    }
    report.cells("operating characteristics, BARD-BLRM and BLRM-SR, 8 scenarios, 2000 reps", t, &cells);
}

fn stage1_diagnostics(report: &mut Report, s1: Option<OcReport>) {
    let t = Instant::now();
    let r = s1.unwrap_or_else(|| oc("bard-boin", "s1", 30_000));
    report.cells(
        "stage-1 diagnostics, BARD-BOIN scenario 1, 30000 reps",
        t,
        &[
            Cell::new("N1", r.mean_n1, 25.24, 1.0),
            Cell::new("stage-1 allocation imbalance", r.stage1_allocation_imbalance, 4.55, 0.5),
        ],
    );
}

fn three_dose(report: &mut Report) {
    let t = Instant::now();
    let r = oc("bard-boin-3", "s3d1", 30_000);
    report.cells(
        "three-dose sensitivity, BARD-BOIN scenario 1, 30000 reps",
        t,
        &[Cell::new("N", r.mean_n, 37.79, 1.0), Cell::new("PCS1", r.pcs1, 50.67, 2.0)],
    );
}

/// Isotonic fit by the max-min formula, independent of pooling.
fn isotonic_minmax(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let avg = |s: usize, t: usize| {
        let (num, den) = (s..=t).fold((0.0, 0.0), |(a, b), i| (a + w[i] * y[i], b + w[i]));
        num / den
    };
    (0..n)
        .map(|i| (0..=i).map(|s| (i..n).map(|t| avg(s, t)).fold(f64::INFINITY, f64::min)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn prop_pava() -> (bool, String) {
    let cells: Vec<(u32, u32)> = (1..=3).flat_map(|n| (0..=n).map(move |y| (y, n))).collect();
    let mut checked = 0u64;
    let mut worst = 0.0f64;
    for k in 1..=5u32 {
        for code in 0..cells.len().pow(k) {
            let mut c = code;
            let data: Vec<(u32, u32)> = (0..k)
                .map(|_| {
                    let v = cells[c % cells.len()];
                    c /= cells.len();
                    v
                })
                .collect();
            let y: Vec<f64> = data.iter().map(|&(y, n)| f64::from(y) / f64::from(n)).collect();
            let w: Vec<f64> = data.iter().map(|&(_, n)| f64::from(n)).collect();
            let fit = pava(&y, &w).unwrap();
            for (a, b) in fit.iter().zip(isotonic_minmax(&y, &w)) {
                worst = worst.max((a - b).abs());
            }
            checked += 1;
        }
    }
    (worst < 1e-12, format!("PAVA vs max-min formula: {checked} instances, max |diff| {worst:.2e}"))
}

fn prop_beta_tail() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let draws = 200_000;
    let mut worst_z = 0.0f64;
    for (a, b) in [(1.0, 1.0), (2.0, 5.0), (4.0, 2.0), (10.0, 12.0), (3.5, 7.5), (1.0, 4.0)] {
        let dist = Beta::new(a, b).unwrap();
        let sample: Vec<f64> = (0..draws).map(|_| dist.sample(&mut rng)).collect();
        for cutoff in [0.1, 0.25, 0.3, 0.5, 0.8] {
            let exact = beta_tail(BetaPosterior::new(a, b).unwrap(), cutoff).unwrap();
            let mc = sample.iter().filter(|&&x| x > cutoff).count() as f64 / draws as f64;
            let se = (exact * (1.0 - exact) / draws as f64).sqrt().max(1e-9);
            worst_z = worst_z.max((mc - exact).abs() / se);
        }
    }
    (worst_z < 4.5, format!("beta tail vs Monte Carlo: 30 cases x 200000 draws, max |z| {worst_z:.2}"))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn prop_minimization() -> (bool, String) {
    let reps = 10_000;
    let truth = ScenarioTruth::preset("s1").unwrap();
    let design = DesignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let mut mini = [Vec::new(), Vec::new(), Vec::new()];
    let mut simple = [Vec::new(), Vec::new(), Vec::new()];
    let index = |arms: &[(Arm, [bool; 3])], k: usize| {
        let share = |a: Arm| {
            let g: Vec<_> = arms.iter().filter(|p| p.0 == a).collect();
            g.iter().filter(|p| p.1[k]).count() as f64 / g.len().max(1) as f64
        };
        100.0 * (share(Arm::Low) - share(Arm::High)).abs()
    };
    for _ in 0..reps {
        let patients: Vec<[bool; 3]> =
            (0..design.n2).map(|_| std::array::from_fn(|k| rng.random::<f64>() < truth.cov_prevalence[k])).collect();
        let spec = CovariateSpec::binary(design.balance_factors.len());
        let mut m = Minimizer::new(spec.clone(), ArmCounts::empty(&spec), design.r).unwrap();
        let a: Vec<(Arm, [bool; 3])> = patients
            .iter()
            .map(|c| {
                let v: Vec<usize> = design.balance_factors.iter().map(|&k| usize::from(c[k])).collect();
                (m.randomize(&v, &mut rng).unwrap().arm, *c)
            })
            .collect();
        let mut first = Arm::Low;
        let s: Vec<(Arm, [bool; 3])> = patients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i % 2 == 0 {
                    first = if rng.random::<bool>() { Arm::Low } else { Arm::High };
                    (first, *c)
                } else {
                    (first.other(), *c)
                }
            })
            .collect();
        for k in 0..3 {
            mini[k].push(index(&a, k));
            simple[k].push(index(&s, k));
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (m1, s1) = mean_sd(&mini[k]);
        let (m2, s2) = mean_sd(&simple[k]);
        let z = (m1 - m2) / ((s1 * s1 + s2 * s2) / reps as f64).sqrt();
        let balanced = design.balance_factors.contains(&k);
        ok &= if balanced { z < -3.0 } else { z.abs() < 3.0 };
        parts.push(format!("X{} {m1:.2} vs {m2:.2} (z {z:.1})", k + 1));
    }
    (ok, format!("minimization vs simple randomization, {reps} trials: {}", parts.join(", ")))
}

fn prop_parallelism() -> (bool, String) {
    let mut ok = true;
    for (design, scenario, reps) in [("bard-boin", "s2", 2000), ("boin-sr", "s7", 1000), ("bard-blrm", "s3", 30)] {
        let s = sim(design, scenario);
        let a = s.run_many(reps, SEED, 1, true).unwrap();
        let b = s.run_many(reps, SEED, 3, true).unwrap();
        let c = s.run_many(reps, SEED, 0, true).unwrap();
        ok &= a == b && a == c;
    }
    (ok, "identical per-trial results on 1, 3 and all threads (3 designs)".into())
}

enum Action<'a> {
    Arrive(&'a PatientRecord),
    Assess(&'a PatientRecord),
}

/// Stage-1 patients of a simulated trial as time-ordered service commands.
fn stage1_actions(r: &TrialResult) -> Vec<Action<'_>> {
    let mut v: Vec<(f64, u8, u32, Action)> = Vec::new();
    for p in r.patients.iter().filter(|p| p.stage == 1) {
        v.push((p.arrival, 1, p.id, Action::Arrive(p)));
        v.push((p.start + 1.0, 0, p.id, Action::Assess(p)));
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    v.into_iter().map(|x| x.3).collect()
}

fn levels(design: &DesignConfig, p: &PatientRecord) -> Vec<usize> {
    design.balance_factors.iter().map(|&k| usize::from(p.covariates[k])).collect()
}

fn prop_replay() -> (bool, String) {
    let design = DesignConfig::default();
    let s = sim("bard-boin", "s6");
    let dir = tempfile::tempdir().unwrap();
    let c = Conduct::open(dir.path()).unwrap();
    let mut ok = true;
    let mut events_total = 0;
    let trials = 20;
    for rep in 0..trials {
        let r = s.run_trial(SEED, rep, true).unwrap();
        let id = format!("r{rep}");
        let req = CreateTrial { trial_id: Some(id.clone()), design: Some(design.clone()), seed: Some(rep), ..Default::default() };
        c.create_trial(req).unwrap();
        for a in stage1_actions(&r) {
            match a {
                Action::Arrive(p) => ok &= c.enroll(&id, &levels(&design, p), true).unwrap().enrollment.dose == Some(p.dose),
                Action::Assess(p) => {
                    c.record_outcome(&id, p.id, p.dlt, Some(p.response)).unwrap();
                }
            }
        }
        let adv = c.advance(&id, None).unwrap();
        if let Some(plan) = adv.plan {
            let stage2: Vec<&PatientRecord> = r.patients.iter().filter(|p| p.stage == 2).collect();
            ok &= stage2.len() as u32 == plan.quota;
            let ids: Vec<u32> =
                stage2.iter().map(|p| c.enroll(&id, &levels(&design, p), true).unwrap().enrollment.patient_id.unwrap()).collect();
            for (pid, p) in ids.iter().zip(&stage2) {
                c.record_outcome(&id, *pid, p.dlt, Some(p.response)).unwrap();
            }
        }
        let direct = c.state(&id).unwrap();
        let fresh = Conduct::open(dir.path()).unwrap();
        ok &= fresh.state(&id).unwrap() == direct;
        let events = c.events(&id).unwrap();
        events_total += events.len();
        let mut half = TrialState::replay(&events[..1]).unwrap();
        for e in &events[1..] {
            half.apply(e).unwrap();
        }
        ok &= half.view() == direct;
    }
    (ok, format!("{trials} full trials, {events_total} events: fresh replay and incremental apply equal live state"))
}

fn cli(dir: &std::path::Path, args: &[&str]) -> Value {
    let out =
        Command::new(env!("CARGO_BIN_EXE_bard")).args(["conduct", "--dir", dir.to_str().unwrap()]).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn prop_oracle() -> (bool, String) {
    let design = DesignConfig::default();
    let mut ok = true;
    let mut compared = 0;
    for (scenario, rep) in [("s1", 0), ("s4", 1), ("s7", 2)] {
        let r = sim("bard-boin", scenario).run_trial(SEED, rep, true).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let svc = Conduct::open(b.path()).unwrap();
        let seed = rep.to_string();
        cli(a.path(), &["create", "--trial", "o", "--preset", "bard-boin", "--seed", &seed]);
        let req =
            CreateTrial { trial_id: Some("o".into()), preset: Some("bard-boin".into()), seed: Some(rep), ..Default::default() };
        svc.create_trial(req).unwrap();
        for act in stage1_actions(&r) {
            let (x, y) = match act {
                Action::Arrive(p) => {
                    let lv = levels(&design, p);
                    let arg = lv.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
                    let x = cli(a.path(), &["enroll", "o", "--covariates", &arg]);
                    let y = serde_json::to_value(svc.enroll("o", &lv, true).unwrap()).unwrap();
                    ok &= y["enrollment"]["dose"] == p.dose;
                    (x, y)
                }
                Action::Assess(p) => {
                    let (pid, dlt, resp) = (p.id.to_string(), p.dlt.to_string(), p.response.to_string());
                    let x = cli(a.path(), &["outcome", "o", "--patient", &pid, "--dlt", &dlt, "--response", &resp]);
                    let y = serde_json::to_value(svc.record_outcome("o", p.id, p.dlt, Some(p.response)).unwrap()).unwrap();
                    (x, y)
                }
            };
            ok &= x == y;
            compared += 1;
        }
        let x = cli(a.path(), &["advance", "o"]);
        let y = serde_json::to_value(svc.advance("o", None).unwrap()).unwrap();
        ok &= x == y;
        ok &= y["plan"]["doses"] == serde_json::to_value(r.stage2_doses).unwrap();
        ok &= r.stage2_doses.is_none() || y["plan"]["quota"] == r.n2;
    }
    (ok, format!("{compared} commands: CLI output equals service output, and both match the simulator's stage 1"))
}

fn properties(report: &mut Report) {
    let t = Instant::now();
    let results = [prop_pava(), prop_beta_tail(), prop_minimization(), prop_parallelism(), prop_replay(), prop_oracle()];
    let lines: Vec<String> = results.iter().map(|(ok, msg)| format!("{} {msg}", if *ok { "ok  " } else { "MISS" })).collect();
    report.verdict("property suites", results.iter().all(|r| r.0), t, &lines);
}

fn main() -> ExitCode {
    let mut report = Report::default();
    println!("acceptance report (seed {SEED})");
    boundaries(&mut report);
    truth_model(&mut report);
    rigidity(&mut report);
    let s1 = oc_boin(&mut report);
    oc_blrm(&mut report);
    stage1_diagnostics(&mut report, s1);
    three_dose(&mut report);
    properties(&mut report);
    println!("acceptance: {} passed, {} failed", report.passed, report.failed);
    if report.failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
