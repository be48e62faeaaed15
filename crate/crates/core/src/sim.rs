//! Event-driven trial simulator and the parallel replicator behind the
//! operating-characteristics tables.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backfill::Assignment;
use crate::config::{ArrivalProcess, DesignConfig, OverflowPolicy, Stage2Mode, TimingModel};
use crate::error::{BardError, Result};
use crate::minimization::{Arm, Minimizer};
use crate::obd::ArmData;
use crate::scenario::{PatientDraw, ScenarioTruth, COVARIATES};
use crate::stage1::{Escalator, Stage1, StopReason};
use crate::stage2::{evaluate_obd, plan_stage2, Stage1Patient, Stage2Doses};

/// Mixed into the master seed for the allocation stream.
const ALLOCATION_STREAM_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct PatientRecord {
    pub id: u32,
    pub stage: u8,
    pub arrival: f64,
    /// Treatment start; later than arrival only for queued patients.
    pub start: f64,
    pub dose: usize,
    pub backfill: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm: Option<Arm>,
    pub covariates: [bool; COVARIATES],
    pub dlt: bool,
    pub response: bool,
    #[serde(skip)]
    escalation: bool,
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct TrialResult {
    pub rep: u64,
    pub n: u32,
    pub n1: u32,
    pub n2: u32,
    pub duration: f64,
    pub stage1_end: f64,
    pub stop: Option<StopReason>,
    pub mtd: Option<usize>,
    pub stage2_doses: Option<Stage2Doses>,
    pub n1_low: u32,
    pub n1_high: u32,
    /// Analysis-set sizes per arm.
    pub n_low: u32,
    pub n_high: u32,
    /// Percent difference in the share of `X_k = 1` between arms; two-arm
    /// trials only.
    pub imbalance: Option<[f64; COVARIATES]>,
    pub obd_margin: Option<usize>,
    pub obd_utility: Option<usize>,
    pub correct_margin: bool,
    pub correct_utility: bool,
    pub obd_in_stage2: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patients: Vec<PatientRecord>,
}

impl TrialResult {
    pub fn two_arm(&self) -> bool {
        self.stage2_doses.is_some_and(|d| !d.is_single())
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Assessment(usize),
    LateResponse(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Accrual<'a> {
    rng: ChaCha8Rng,
    exp: Option<Exp<f64>>,
    spacing: f64,
    truth: &'a ScenarioTruth,
}

impl Accrual<'_> {
    fn gap(&mut self) -> f64 {
        match &self.exp {
            Some(e) => e.sample(&mut self.rng),
            None => self.spacing,
        }
    }

    fn draw(&mut self) -> PatientDraw {
        self.truth.draw_patient(&mut self.rng)
    }
}

/// A validated design/scenario/timing combination ready to simulate.
#[derive(Debug, Clone)]
pub struct Simulator {
    design: DesignConfig,
    escalator: Escalator,
    truth: ScenarioTruth,
    timing: TimingModel,
}

impl Simulator {
    pub fn new(design: DesignConfig, truth: ScenarioTruth, timing: TimingModel) -> Result<Self> {
        design.validate()?;
        timing.validate()?;
        truth.validate()?;
        if truth.dose_count() != design.n_doses {
            return Err(BardError::config(format!(
                "scenario {} has {} doses but the design has {}",
                truth.name,
                truth.dose_count(),
                design.n_doses
            )));
        }
        let escalator = Escalator::from_design(&design)?;
        Ok(Self { design, escalator, truth, timing })
    }

    pub fn design(&self) -> &DesignConfig {
        &self.design
    }

    pub fn truth(&self) -> &ScenarioTruth {
        &self.truth
    }

    /// Simulate replication `rep` under `master_seed`. Patient arrivals and
    /// outcomes come from one stream and allocation draws from another, so
    /// designs compared under the same seed see the same patients.
    pub fn run_trial(&self, master_seed: u64, rep: u64, keep_patients: bool) -> Result<TrialResult> {
        let mut prng = ChaCha8Rng::seed_from_u64(master_seed);
        prng.set_stream(rep);
        let mut arng = ChaCha8Rng::seed_from_u64(master_seed ^ ALLOCATION_STREAM_KEY);
        arng.set_stream(rep);
        let timing = &self.timing;
        let mut accrual = Accrual {
            rng: prng,
            exp: match timing.arrivals {
                ArrivalProcess::Poisson => Some(Exp::new(timing.accrual_rate).map_err(|e| BardError::config(e.to_string()))?),
                ArrivalProcess::Deterministic => None,
            },
            spacing: 1.0 / timing.accrual_rate,
            truth: &self.truth,
        };
        let late = timing.response_window > timing.dlt_window;
        let window = timing.dlt_window.max(timing.response_window);

        let mut stage1 = Stage1::new(&self.design, self.escalator.clone())?;
        let mut patients: Vec<PatientRecord> = Vec::new();
        let mut heap: BinaryHeap<Event> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut queue: VecDeque<(f64, PatientDraw)> = VecDeque::new();
        let queue_cap = self.design.cohort_size as usize;

        let mut enroll = |stage1: &mut Stage1,
                          patients: &mut Vec<PatientRecord>,
                          heap: &mut BinaryHeap<Event>,
                          a: Assignment,
                          arrival: f64,
                          start: f64,
                          draw: PatientDraw|
         -> Result<()> {
            let (dose, escalation) = match a {
                Assignment::EscalationCohort(j) => (j, true),
                Assignment::Backfill(b) => (b, false),
                Assignment::NotEnrolled => return Ok(()),
            };
            stage1.enroll(a)?;
            let id = patients.len();
            patients.push(PatientRecord {
                id: id as u32,
                stage: 1,
                arrival,
                start,
                dose,
                backfill: !escalation,
                arm: None,
                covariates: draw.covariates,
                dlt: draw.dlt(&self.truth, dose),
                response: draw.response(&self.truth, dose),
                escalation,
            });
            seq += 1;
            heap.push(Event { time: start + timing.dlt_window, seq, kind: EventKind::Assessment(id) });
            if late && patients[id].response {
                seq += 1;
                heap.push(Event { time: start + timing.response_window, seq, kind: EventKind::LateResponse(id) });
            }
            Ok(())
        };

        let mut t_arrival = accrual.gap();
        let mut now = 0.0;
        loop {
            match heap.peek() {
                Some(ev) if ev.time <= t_arrival => {
                    let ev = heap.pop().expect("peeked");
                    now = ev.time;
                    match ev.kind {
                        EventKind::Assessment(id) => {
                            let p = &patients[id];
                            let decided = stage1.complete(p.dose, p.escalation, p.dlt, p.response && !late)?;
                            if decided.is_some() && timing.overflow == OverflowPolicy::Queue {
                                while let a @ Assignment::EscalationCohort(_) = stage1.assign() {
                                    let Some((arrival, draw)) = queue.pop_front() else { break };
                                    enroll(&mut stage1, &mut patients, &mut heap, a, arrival, now, draw)?;
                                }
                            }
                        }
                        EventKind::LateResponse(id) => stage1.late_response(patients[id].dose)?,
                    }
                }
                _ => {
                    if stage1.is_stopped() && heap.is_empty() {
                        break;
                    }
                    now = t_arrival;
                    let draw = accrual.draw();
                    match stage1.assign() {
                        Assignment::NotEnrolled => {
                            if timing.overflow == OverflowPolicy::Queue && queue.len() < queue_cap {
                                queue.push_back((now, draw));
                            }
                        }
                        a => enroll(&mut stage1, &mut patients, &mut heap, a, now, now, draw)?,
                    }
                    t_arrival += accrual.gap();
                }
            }
        }
        let stage1_end = now;
        let n1 = patients.len() as u32;
        let mtd = stage1.select_mtd();
        let stop = stage1.stop_reason();

        let mut result = TrialResult {
            rep,
            n: n1,
            n1,
            n2: 0,
            duration: stage1_end,
            stage1_end,
            stop,
            mtd,
            stage2_doses: None,
            n1_low: 0,
            n1_high: 0,
            n_low: 0,
            n_high: 0,
            imbalance: None,
            obd_margin: None,
            obd_utility: None,
            correct_margin: false,
            correct_utility: false,
            obd_in_stage2: false,
            patients: Vec::new(),
        };
        let Some(mtd) = mtd else {
            if keep_patients {
                result.patients = patients;
            }
            return Ok(result);
        };

        let design = &self.design;
        let doses = Stage2Doses::from_mtd(mtd);
        let levels =
            |c: &[bool; COVARIATES]| -> Vec<usize> { design.balance_factors.iter().map(|&k| usize::from(c[k])).collect() };
        let s1: Vec<Stage1Patient> =
            patients.iter().map(|p| Stage1Patient { dose: p.dose, levels: levels(&p.covariates), eligible: true }).collect();
        let plan = plan_stage2(design, doses, &s1)?;
        let mut minimizer = Minimizer::new(design.covariate_spec(), plan.counts.clone(), design.r)?;
        minimizer.max_per_arm = design.max_per_arm;

        let mut last_start = None;
        for i in 0..plan.quota {
            let (arrival, start, draw) = match queue.pop_front() {
                Some((arrival, draw)) => (arrival, stage1_end, draw),
                None => {
                    let t = t_arrival;
                    t_arrival += accrual.gap();
                    (t, t, accrual.draw())
                }
            };
            let arm = if doses.is_single() {
                Arm::High
            } else {
                match plan.mode {
                    Stage2Mode::Conditional | Stage2Mode::PocockSimonFull => {
                        minimizer.randomize(&levels(&draw.covariates), &mut arng)?.arm
                    }
                    Stage2Mode::SimpleRandom => {
                        if i % 2 == 0 {
                            if arng.random::<f64>() < 0.5 {
                                Arm::Low
                            } else {
                                Arm::High
                            }
                        } else {
                            patients.last().and_then(|p| p.arm).map_or(Arm::Low, Arm::other)
                        }
                    }
                }
            };
            let dose = doses.dose(arm);
            patients.push(PatientRecord {
                id: patients.len() as u32,
                stage: 2,
                arrival,
                start,
                dose,
                backfill: false,
                arm: Some(arm),
                covariates: draw.covariates,
                dlt: draw.dlt(&self.truth, dose),
                response: draw.response(&self.truth, dose),
                escalation: false,
            });
            last_start = Some(start);
        }

        let use_stage1 = plan.mode == Stage2Mode::Conditional;
        let mut data = [ArmData::default(); 2];
        let mut x_ones = [[0u32; COVARIATES]; 2];
        for p in &patients {
            let arm = match (p.stage, p.arm) {
                (2, Some(a)) => a,
                (1, _) if use_stage1 => match doses.arm_of(p.dose) {
                    Some(a) => a,
                    None => continue,
                },
                _ => continue,
            };
            data[arm.index()].add(p.dlt, p.response);
            for k in 0..COVARIATES {
                x_ones[arm.index()][k] += u32::from(p.covariates[k]);
            }
        }
        let obd = evaluate_obd(design, doses, data[0], data[1])?;

        result.n = patients.len() as u32;
        result.n2 = result.n - n1;
        result.duration = last_start.map_or(stage1_end, |s| s + window);
        result.stage2_doses = Some(doses);
        result.n1_low = plan.n1_low;
        result.n1_high = plan.n1_high;
        result.n_low = data[0].n;
        result.n_high = data[1].n;
        if !doses.is_single() && data[0].n > 0 && data[1].n > 0 {
            result.imbalance = Some(std::array::from_fn(|k| {
                let a = f64::from(x_ones[0][k]) / f64::from(data[0].n);
                let b = f64::from(x_ones[1][k]) / f64::from(data[1].n);
                100.0 * (a - b).abs()
            }));
        }
        result.obd_margin = obd.margin;
        result.obd_utility = obd.utility;
        result.correct_margin = obd.margin == Some(self.truth.true_obd);
        result.correct_utility = obd.utility == Some(self.truth.true_obd);
        result.obd_in_stage2 = doses.contains(self.truth.true_obd);
        if keep_patients {
            result.patients = patients;
        }
        Ok(result)
    }

    /// Run `reps` replications on `parallelism` threads (0 for all cores).
    /// Results come back in replication order whatever the thread count.
    pub fn run_many(&self, reps: u32, master_seed: u64, parallelism: usize, keep_patients: bool) -> Result<Vec<TrialResult>> {
        if reps == 0 {
            return Err(BardError::param("reps must be at least 1"));
        }
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(parallelism).build().map_err(|e| BardError::config(e.to_string()))?;
        pool.install(|| (0..u64::from(reps)).into_par_iter().map(|rep| self.run_trial(master_seed, rep, keep_patients)).collect())
    }

    pub fn replicate(&self, reps: u32, master_seed: u64, parallelism: usize) -> Result<OcReport> {
        let results = self.run_many(reps, master_seed, parallelism, false)?;
        Ok(OcReport::aggregate(&results, master_seed))
    }
}

/// Simulate one trial; see [`Simulator::run_trial`].
pub fn run_trial(
    design: &DesignConfig,
    truth: &ScenarioTruth,
    timing: &TimingModel,
    master_seed: u64,
    rep: u64,
) -> Result<TrialResult> {
    Simulator::new(design.clone(), truth.clone(), *timing)?.run_trial(master_seed, rep, true)
}

/// Operating characteristics over `reps` replications.
pub fn replicate(
    design: &DesignConfig,
    truth: &ScenarioTruth,
    timing: &TimingModel,
    reps: u32,
    master_seed: u64,
    parallelism: usize,
) -> Result<OcReport> {
    Simulator::new(design.clone(), truth.clone(), *timing)?.replicate(reps, master_seed, parallelism)
}

/// Operating characteristics aggregated over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct OcReport {
    pub reps: u32,
    pub seed: u64,
    pub mean_n: f64,
    pub mean_duration: f64,
    /// Per covariate, percent; over two-arm trials.
    pub imbalance: [f64; COVARIATES],
    /// Mean |n_low - n_high| over two-arm trials.
    pub allocation_imbalance: f64,
    pub pcs1: f64,
    pub pcs2: f64,
    pub mean_n1: f64,
    /// Percent of trials carrying the true OBD into stage 2.
    pub pcs_stage2_doses: f64,
    /// Over two-arm trials.
    pub mean_n1_low: f64,
    pub mean_n1_high: f64,
    pub stage1_allocation_imbalance: f64,
    pub two_arm_trials: u32,
    /// Percent of trials with no MTD.
    pub no_mtd: f64,
}

impl OcReport {
    pub fn aggregate(results: &[TrialResult], seed: u64) -> Self {
        let reps = results.len();
        let all = reps.max(1) as f64;
        let two: Vec<&TrialResult> = results.iter().filter(|r| r.two_arm()).collect();
        let nt = two.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialResult) -> f64| results.iter().map(f).sum::<f64>() / all;
        let mean2 = |f: &dyn Fn(&TrialResult) -> f64| two.iter().map(|r| f(r)).sum::<f64>() / nt;
        let pct = |f: &dyn Fn(&TrialResult) -> bool| 100.0 * results.iter().filter(|r| f(r)).count() as f64 / all;
        Self {
            reps: reps as u32,
            seed,
            mean_n: mean(&|r| f64::from(r.n)),
            mean_duration: mean(&|r| r.duration),
            imbalance: std::array::from_fn(|k| mean2(&|r| r.imbalance.map_or(0.0, |v| v[k]))),
            allocation_imbalance: mean2(&|r| f64::from(r.n_low.abs_diff(r.n_high))),
            pcs1: pct(&|r| r.correct_margin),
            pcs2: pct(&|r| r.correct_utility),
            mean_n1: mean(&|r| f64::from(r.n1)),
            pcs_stage2_doses: pct(&|r| r.obd_in_stage2),
            mean_n1_low: mean2(&|r| f64::from(r.n1_low)),
            mean_n1_high: mean2(&|r| f64::from(r.n1_high)),
            stage1_allocation_imbalance: mean2(&|r| f64::from(r.n1_low.abs_diff(r.n1_high))),
            two_arm_trials: two.len() as u32,
            no_mtd: pct(&|r| r.mtd.is_none()),
        }
    }
}

/// One CSV row; column names follow the published tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct OcRow {
    #[serde(rename = "Design")]
    pub design: String,
    #[serde(rename = "Scenario")]
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "Duration")]
    pub duration: f64,
    #[serde(rename = "Imbalance X1")]
    pub imbalance_x1: f64,
    #[serde(rename = "Imbalance X2")]
    pub imbalance_x2: f64,
    #[serde(rename = "Imbalance X3")]
    pub imbalance_x3: f64,
    #[serde(rename = "Imbalance allocation")]
    pub imbalance_allocation: f64,
    #[serde(rename = "PCS1")]
    pub pcs1: f64,
    #[serde(rename = "PCS2")]
    pub pcs2: f64,
    #[serde(rename = "N1")]
    pub n1: f64,
    #[serde(rename = "PCS of stage 2 doses")]
    pub pcs_stage2_doses: f64,
    #[serde(rename = "n1_low")]
    pub n1_low: f64,
    #[serde(rename = "n1_high")]
    pub n1_high: f64,
    #[serde(rename = "Imbalance of allocation at stage 1")]
    pub stage1_allocation_imbalance: f64,
    #[serde(rename = "Reps")]
    pub reps: u32,
    #[serde(rename = "Seed")]
    pub seed: u64,
}

impl OcRow {
    pub fn new(design: &str, scenario: &str, r: &OcReport) -> Self {
        Self {
            design: design.to_string(),
            scenario: scenario.to_string(),
            n: r.mean_n,
            duration: r.mean_duration,
            imbalance_x1: r.imbalance[0],
            imbalance_x2: r.imbalance[1],
            imbalance_x3: r.imbalance[2],
            imbalance_allocation: r.allocation_imbalance,
            pcs1: r.pcs1,
            pcs2: r.pcs2,
            n1: r.mean_n1,
            pcs_stage2_doses: r.pcs_stage2_doses,
            n1_low: r.mean_n1_low,
            n1_high: r.mean_n1_high,
            stage1_allocation_imbalance: r.stage1_allocation_imbalance,
            reps: r.reps,
            seed: r.seed,
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[OcRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| BardError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per replication.
pub fn write_trace<W: Write>(mut out: W, results: &[TrialResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(|e| BardError::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
