//! Trial state as a fold over the event log, and the commands that extend it.
//!
//! Every command runs on a clone: the primary event is applied, then the
//! derived events it implies (decisions, closures, completion) are drained
//! and applied in turn. Replay walks the same path and checks each derived
//! event in the log against the one it recomputes.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use bard_core::backfill::Assignment;
use bard_core::config::{DesignConfig, Stage2Mode};
use bard_core::minimization::{Allocation, Arm, CovariateSpec, Minimizer};
use bard_core::obd::{Admissibility, ArmData};
use bard_core::stage1::{Cohort, DecisionRecord, Escalator, Stage1, Stage1Summary, StopReason};
use bard_core::stage2::{evaluate_obd, plan_stage2, ObdOutcome, Stage1Patient, Stage2Doses, Stage2Plan};
use bard_core::Decision;

use crate::error::{ConductError, Result};
use crate::event::{CloseReason, Completion, DecisionNote, EventKind, TrialEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Completed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Patient {
    pub id: u32,
    pub stage: u8,
    pub dose: usize,
    /// Member of an escalation cohort.
    pub escalation: bool,
    pub backfill: bool,
    pub arm: Option<Arm>,
    pub covariates: Vec<usize>,
    pub eligible: bool,
    pub dlt: Option<bool>,
    pub response: Option<bool>,
}

impl Patient {
    pub fn is_final(&self) -> bool {
        self.dlt.is_some() && self.response.is_some()
    }
}

#[derive(Debug, Clone)]
struct Stage2State {
    plan: Stage2Plan,
    minimizer: Minimizer,
    enrolled: u32,
    draws: u64,
    last_arm: Option<Arm>,
}

/// Uniform draw number `index` of a trial's allocation stream.
pub fn allocation_uniform(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

/// Result of an enrollment request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Enrollment {
    pub enrolled: bool,
    pub patient_id: Option<u32>,
    pub stage: u8,
    pub dose: Option<usize>,
    pub assignment: Option<Assignment>,
    pub arm: Option<Arm>,
    pub allocation: Option<Allocation>,
    pub advisory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Stage2Progress {
    pub doses: Stage2Doses,
    pub mode: Stage2Mode,
    pub quota: u32,
    pub enrolled: u32,
    pub n1_low: u32,
    pub n1_high: u32,
}

/// What the investigator needs after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DecisionSummary {
    pub stage: Stage,
    pub current_dose: usize,
    pub cohort: Cohort,
    pub open_backfill: Vec<usize>,
    pub eliminated: Vec<usize>,
    pub pending: u32,
    pub stop: Option<StopReason>,
    /// Stage 1 has stopped with no assessment outstanding.
    pub ready_to_advance: bool,
    /// Route of the next stage-1 arrival.
    pub next_assignment: Option<Assignment>,
    pub last_decision: Option<DecisionRecord>,
    /// The rule behind `last_decision`, spelled out.
    pub last_rule: Option<String>,
    /// BOIN boundaries, when the engine is BOIN.
    pub lambda_e: Option<f64>,
    pub lambda_d: Option<f64>,
    pub stage2: Option<Stage2Progress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StateView {
    pub trial_id: String,
    pub design_id: Option<String>,
    pub design: DesignConfig,
    pub seed: u64,
    pub seq: u64,
    pub summary: DecisionSummary,
    pub stage1: Stage1Summary,
    pub patients: Vec<Patient>,
    pub completion: Option<Completion>,
    pub obd: Option<ObdOutcome>,
}

/// Counts of each covariate level by arm over the analysis set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BalanceTable {
    pub totals: [u32; 2],
    /// Per balanced factor, per level: `[low, high]`.
    pub factors: Vec<Vec<[u32; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ObdReport {
    pub trial_id: String,
    pub stage: Stage,
    #[serde(rename = "final")]
    pub is_final: bool,
    pub caveats: Vec<String>,
    pub doses: Option<Stage2Doses>,
    pub obd_margin: Option<usize>,
    pub obd_utility: Option<usize>,
    pub admissibility: Option<[Admissibility; 2]>,
    pub efficacy: Option<[Option<f64>; 2]>,
    pub posterior_utility: Option<[f64; 2]>,
    pub data: Option<[ArmData; 2]>,
    pub balance: Option<BalanceTable>,
}

#[derive(Debug, Clone)]
pub struct TrialState {
    trial_id: String,
    design_id: Option<String>,
    design: DesignConfig,
    spec: CovariateSpec,
    seed: u64,
    stage: Stage,
    stage1: Stage1,
    patients: Vec<Patient>,
    stage2: Option<Stage2State>,
    completion: Option<Completion>,
    obd: Option<ObdOutcome>,
    closed: Vec<Option<CloseReason>>,
    last_decision: Option<DecisionRecord>,
    last_rule: Option<String>,
    seq: u64,
    /// Derived events the log must contain next.
    expected: VecDeque<EventKind>,
}

impl TrialState {
    /// The opening event of a new trial.
    pub fn create(
        trial_id: &str,
        design_id: Option<String>,
        design: DesignConfig,
        seed: u64,
        now: u64,
    ) -> Result<(Self, Vec<TrialEvent>)> {
        design.validate().map_err(|e| ConductError::Validation(e.to_string()))?;
        let ev = TrialEvent {
            seq: 1,
            timestamp: now,
            kind: EventKind::TrialCreated { trial_id: trial_id.to_string(), design_id, design, seed },
        };
        let state = Self::from_created(&ev).map_err(|e| ConductError::Validation(e.to_string()))?;
        Ok((state, vec![ev]))
    }

    fn from_created(ev: &TrialEvent) -> Result<Self> {
        let EventKind::TrialCreated { trial_id, design_id, design, seed } = &ev.kind else {
            return Err(ConductError::replay(ev.seq, "log must open with TrialCreated"));
        };
        if ev.seq != 1 {
            return Err(ConductError::replay(ev.seq, "log must start at sequence 1"));
        }
        let escalator = Escalator::from_design(design).map_err(|e| ConductError::replay(1, e.to_string()))?;
        let stage1 = Stage1::new(design, escalator).map_err(|e| ConductError::replay(1, e.to_string()))?;
        let mut s = Self {
            trial_id: trial_id.clone(),
            design_id: design_id.clone(),
            spec: design.covariate_spec(),
            design: design.clone(),
            seed: *seed,
            stage: Stage::Stage1,
            stage1,
            patients: Vec::new(),
            stage2: None,
            completion: None,
            obd: None,
            closed: vec![None; design.n_doses],
            last_decision: None,
            last_rule: None,
            seq: 1,
            expected: VecDeque::new(),
        };
        s.queue_closures();
        if !s.expected.is_empty() {
            return Err(ConductError::replay(1, "design closes doses before any data"));
        }
        Ok(s)
    }

    /// Fold a whole log.
    pub fn replay(events: &[TrialEvent]) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or_else(|| ConductError::replay(1, "empty log"))?;
        let mut s = Self::from_created(first)?;
        for ev in rest {
            s.apply(ev)?;
        }
        if let Some(k) = s.expected.front() {
            return Err(ConductError::replay(s.seq + 1, format!("log ends before derived event {}", kind_name(k))));
        }
        Ok(s)
    }

    /// Apply one logged event. Any inconsistency is a replay error naming
    /// the event's sequence number.
    pub fn apply(&mut self, ev: &TrialEvent) -> Result<()> {
        if ev.seq != self.seq + 1 {
            return Err(ConductError::replay(ev.seq, format!("expected sequence {}", self.seq + 1)));
        }
        let r = match self.expected.pop_front() {
            Some(front) if front == ev.kind => self.apply_derived(&ev.kind),
            Some(front) => Err(ConductError::Validation(format!(
                "expected derived event {} but found {}",
                kind_name(&front),
                kind_name(&ev.kind)
            ))),
            None => self.apply_primary(&ev.kind),
        };
        r.map_err(|e| match e {
            ConductError::Replay { .. } => e,
            other => ConductError::replay(ev.seq, other.to_string()),
        })?;
        self.seq = ev.seq;
        Ok(())
    }

    fn execute(&self, primary: EventKind, now: u64) -> Result<(Self, Vec<TrialEvent>)> {
        let mut next = self.clone();
        next.apply_primary(&primary)?;
        next.seq += 1;
        let mut events = vec![TrialEvent { seq: next.seq, timestamp: now, kind: primary }];
        while let Some(kind) = next.expected.pop_front() {
            next.apply_derived(&kind)?;
            next.seq += 1;
            events.push(TrialEvent { seq: next.seq, timestamp: now, kind });
        }
        Ok((next, events))
    }

    fn apply_primary(&mut self, kind: &EventKind) -> Result<()> {
        match kind {
            EventKind::TrialCreated { .. } => Err(ConductError::State("trial already created".into())),
            EventKind::PatientEnrolled { patient_id, stage, covariates, eligible, dose, assignment, arm, draw } => {
                if *patient_id as usize != self.patients.len() {
                    return Err(ConductError::Validation(format!("patient id {patient_id} out of order")));
                }
                self.spec.check(covariates).map_err(|e| ConductError::Validation(e.to_string()))?;
                match (self.stage, stage) {
                    (Stage::Stage1, 1) => {
                        let a = self.stage1.assign();
                        let want_dose = match a {
                            Assignment::EscalationCohort(j) | Assignment::Backfill(j) => j,
                            Assignment::NotEnrolled => return Err(ConductError::State("no stage-1 slot is open".into())),
                        };
                        if *assignment != Some(a) || *dose != want_dose || arm.is_some() || draw.is_some() {
                            return Err(ConductError::Validation(format!("stage-1 assignment must be {a:?}")));
                        }
                        self.stage1.enroll(a)?;
                        self.patients.push(Patient {
                            id: *patient_id,
                            stage: 1,
                            dose: want_dose,
                            escalation: matches!(a, Assignment::EscalationCohort(_)),
                            backfill: matches!(a, Assignment::Backfill(_)),
                            arm: None,
                            covariates: covariates.clone(),
                            eligible: *eligible,
                            dlt: None,
                            response: None,
                        });
                        self.expected.push_back(EventKind::DecisionTaken(DecisionNote::Assignment {
                            assignment: Some(a),
                            arm: None,
                            omega_low: None,
                            omega_high: None,
                        }));
                        self.queue_closures();
                    }
                    (Stage::Stage2, 2) => {
                        let (want_arm, want_draw, alloc) = self.next_allocation(covariates)?;
                        let s2 = self.stage2.as_mut().expect("stage 2 state");
                        let want_dose = s2.plan.doses.dose(want_arm);
                        if *arm != Some(want_arm) || *draw != want_draw || *dose != want_dose || assignment.is_some() {
                            return Err(ConductError::Validation(format!(
                                "stage-2 allocation must be {want_arm:?} at dose {want_dose} (draw {want_draw:?})"
                            )));
                        }
                        s2.minimizer.counts.add(want_arm, covariates);
                        s2.enrolled += 1;
                        s2.draws += u64::from(want_draw.is_some());
                        s2.last_arm = Some(want_arm);
                        self.patients.push(Patient {
                            id: *patient_id,
                            stage: 2,
                            dose: want_dose,
                            escalation: false,
                            backfill: false,
                            arm: Some(want_arm),
                            covariates: covariates.clone(),
                            eligible: *eligible,
                            dlt: None,
                            response: None,
                        });
                        self.expected.push_back(EventKind::DecisionTaken(DecisionNote::Assignment {
                            assignment: None,
                            arm: Some(want_arm),
                            omega_low: alloc.map(|a| a.omega_low),
                            omega_high: alloc.map(|a| a.omega_high),
                        }));
                    }
                    (s, n) => return Err(ConductError::State(format!("cannot enroll a stage-{n} patient in {s:?}"))),
                }
                Ok(())
            }
            EventKind::OutcomeRecorded { patient_id, dlt, response } => {
                self.check_outcome(*patient_id, *dlt, *response)?;
                let p = self.patients[*patient_id as usize].clone();
                match p.dlt {
                    None => {
                        if p.stage == 1 {
                            let rec = self.stage1.complete(p.dose, p.escalation, *dlt, *response == Some(true))?;
                            if let Some(record) = rec {
                                self.expected.push_back(EventKind::DecisionTaken(DecisionNote::Escalation { record }));
                            }
                        }
                        let q = &mut self.patients[*patient_id as usize];
                        q.dlt = Some(*dlt);
                        q.response = *response;
                    }
                    Some(_) => {
                        if p.stage == 1 && self.stage == Stage::Stage1 && *response == Some(true) {
                            self.stage1.late_response(p.dose)?;
                        }
                        self.patients[*patient_id as usize].response = *response;
                    }
                }
                if self.stage == Stage::Stage1 {
                    self.queue_closures();
                }
                self.queue_completion();
                Ok(())
            }
            EventKind::StageAdvanced { doses, overridden, n1_low, n1_high, quota, warnings } => {
                self.check_advance()?;
                let plan = self.plan(*doses)?;
                let default = self.stage1.select_mtd().map(Stage2Doses::from_mtd);
                if (plan.n1_low, plan.n1_high, plan.quota) != (*n1_low, *n1_high, *quota)
                    || *overridden != (default != Some(*doses))
                    || *warnings != self.override_warnings(*doses)
                {
                    return Err(ConductError::Validation("stage-2 plan does not match the stage-1 data".into()));
                }
                let mut minimizer = Minimizer::new(self.spec.clone(), plan.counts.clone(), self.design.r)?;
                minimizer.max_per_arm = self.design.max_per_arm;
                self.stage2 = Some(Stage2State { plan, minimizer, enrolled: 0, draws: 0, last_arm: None });
                self.stage = Stage::Stage2;
                self.queue_completion();
                Ok(())
            }
            EventKind::TrialCompleted { outcome: Completion::Terminated { reason } } => {
                self.check_advance()?;
                if self.stage1.select_mtd().is_some() || *reason != self.stage1.stop_reason() {
                    return Err(ConductError::Validation("termination requires stage 1 to end without an MTD".into()));
                }
                self.finish(Completion::Terminated { reason: *reason })
            }
            EventKind::DecisionTaken(DecisionNote::Assignment { assignment: Some(Assignment::NotEnrolled), .. }) => {
                if self.stage != Stage::Stage1 || self.stage1.assign() != Assignment::NotEnrolled {
                    return Err(ConductError::Validation("a declined enrollment must match the current rule".into()));
                }
                Ok(())
            }
            other => Err(ConductError::Validation(format!("{} is never a primary event", kind_name(other)))),
        }
    }

    fn apply_derived(&mut self, kind: &EventKind) -> Result<()> {
        match kind {
            EventKind::DecisionTaken(DecisionNote::Escalation { record }) => {
                self.last_decision = Some(*record);
                self.last_rule = Some(self.describe(record));
            }
            EventKind::DecisionTaken(_) => {}
            EventKind::DoseClosed { dose, reason } => self.closed[*dose] = Some(*reason),
            EventKind::TrialCompleted { outcome } => self.finish(*outcome)?,
            other => return Err(ConductError::Validation(format!("{} is never derived", kind_name(other)))),
        }
        Ok(())
    }

    fn finish(&mut self, outcome: Completion) -> Result<()> {
        if outcome == Completion::Completed {
            let (doses, data, _) = self.analysis(true).ok_or_else(|| ConductError::State("no stage-2 plan".into()))?;
            self.obd = Some(evaluate_obd(&self.design, doses, data[0], data[1])?);
            self.stage = Stage::Completed;
        } else {
            self.stage = Stage::Terminated;
        }
        self.completion = Some(outcome);
        Ok(())
    }

    fn queue_closures(&mut self) {
        let tally = self.stage1.tally();
        let backfill = self.stage1.backfill();
        for j in 0..self.closed.len() {
            if self.closed[j].is_some() {
                continue;
            }
            let reason = if tally.is_eliminated(j) {
                CloseReason::Eliminated
            } else if backfill.doses[j].permanently_closed {
                CloseReason::BackfillCapReached
            } else {
                continue;
            };
            let ev = EventKind::DoseClosed { dose: j, reason };
            if !self.expected.contains(&ev) {
                self.expected.push_back(ev);
            }
        }
    }

    fn queue_completion(&mut self) {
        let Some(s2) = &self.stage2 else { return };
        if self.stage == Stage::Stage2 && s2.enrolled >= s2.plan.quota && self.patients.iter().all(Patient::is_final) {
            let ev = EventKind::TrialCompleted { outcome: Completion::Completed };
            if !self.expected.contains(&ev) {
                self.expected.push_back(ev);
            }
        }
    }

    fn check_outcome(&self, patient_id: u32, dlt: bool, response: Option<bool>) -> Result<()> {
        let p = self.patients.get(patient_id as usize).ok_or_else(|| ConductError::NotFound(format!("patient {patient_id}")))?;
        if matches!(self.stage, Stage::Completed | Stage::Terminated) {
            return Err(ConductError::State("trial is closed".into()));
        }
        match (p.dlt, p.response) {
            (None, _) => Ok(()),
            (Some(d), _) if d != dlt => Err(ConductError::Conflict(format!("patient {patient_id} already has dlt = {d}"))),
            (Some(_), Some(r)) => {
                Err(ConductError::Conflict(format!("patient {patient_id} already has final outcomes (response = {r})")))
            }
            (Some(_), None) if response.is_none() => {
                Err(ConductError::Conflict(format!("patient {patient_id}: nothing new to record")))
            }
            (Some(_), None) => Ok(()),
        }
    }

    fn check_advance(&self) -> Result<()> {
        if self.stage != Stage::Stage1 {
            return Err(ConductError::State(format!("trial is in {:?}", self.stage)));
        }
        if !self.stage1.is_stopped() {
            return Err(ConductError::State("stage 1 has not met a stopping rule".into()));
        }
        if self.stage1.pending() > 0 {
            return Err(ConductError::State(format!("{} stage-1 assessments pending", self.stage1.pending())));
        }
        Ok(())
    }

    fn stage1_patients(&self) -> Vec<Stage1Patient> {
        self.patients
            .iter()
            .filter(|p| p.stage == 1)
            .map(|p| Stage1Patient { dose: p.dose, levels: p.covariates.clone(), eligible: p.eligible })
            .collect()
    }

    fn plan(&self, doses: Stage2Doses) -> Result<Stage2Plan> {
        plan_stage2(&self.design, doses, &self.stage1_patients()).map_err(|e| ConductError::Validation(e.to_string()))
    }

    /// Advisory notes on a stage-2 dose pair that departs from the stage-1 data.
    fn override_warnings(&self, doses: Stage2Doses) -> Vec<String> {
        let tally = self.stage1.tally();
        let mut w = Vec::new();
        let mut check = |j: usize| {
            if tally.dose(j).evaluated == 0 {
                w.push(format!("dose {j} has no stage-1 data"));
            }
            if tally.is_eliminated(j) {
                w.push(format!("dose {j} was eliminated in stage 1"));
            }
        };
        if let Some(l) = doses.low {
            check(l);
        }
        check(doses.high);
        if doses.low.is_some_and(|l| l + 1 != doses.high) {
            w.push("stage-2 doses are not adjacent".into());
        }
        match self.stage1.select_mtd() {
            Some(m) if m.abs_diff(doses.high) > 1 => w.push(format!("high dose {} is far from the MTD {m}", doses.high)),
            None => w.push("stage 1 selected no MTD".into()),
            _ => {}
        }
        w
    }

    fn next_allocation(&self, covariates: &[usize]) -> Result<(Arm, Option<u64>, Option<Allocation>)> {
        let s2 = self.stage2.as_ref().ok_or_else(|| ConductError::State("no stage-2 plan".into()))?;
        if s2.enrolled >= s2.plan.quota {
            return Err(ConductError::Quota(format!("{} of {} enrolled", s2.enrolled, s2.plan.quota)));
        }
        if s2.plan.doses.is_single() {
            return Ok((Arm::High, None, None));
        }
        let idx = s2.draws;
        Ok(match s2.plan.mode {
            Stage2Mode::Conditional | Stage2Mode::PocockSimonFull => {
                let alloc = s2.minimizer.choose(covariates, allocation_uniform(self.seed, idx))?;
                (alloc.arm, Some(idx), Some(alloc))
            }
            Stage2Mode::SimpleRandom => match (s2.enrolled % 2, s2.last_arm) {
                (1, Some(prev)) => (prev.other(), None, None),
                _ => {
                    let arm = if allocation_uniform(self.seed, idx) < 0.5 { Arm::Low } else { Arm::High };
                    (arm, Some(idx), None)
                }
            },
        })
    }

    fn describe(&self, r: &DecisionRecord) -> String {
        let d = self.stage1.tally().dose(r.from);
        let what = match r.decision {
            Decision::Escalate => "escalate",
            Decision::Stay => "stay",
            Decision::DeEscalate => "de-escalate",
            Decision::TerminateAllToxic => "terminate",
        };
        let mut s = match self.stage1.escalator() {
            Escalator::Boin(p) => {
                let rate = d.dlt_rate().unwrap_or(0.0);
                let cmp = if rate <= p.lambda_e {
                    format!("<= lambda_e={:.3}", p.lambda_e)
                } else if rate > p.lambda_d {
                    format!("> lambda_d={:.3}", p.lambda_d)
                } else {
                    format!("in (lambda_e={:.3}, lambda_d={:.3}]", p.lambda_e, p.lambda_d)
                };
                format!("p={}/{}={:.2} at dose {} {cmp} -> {what} to dose {}", d.dlt, d.evaluated, rate, r.from, r.to)
            }
            Escalator::Blrm(b) => format!("highest PTT with POD < eta={:.2} -> {what} to dose {}", b.params.eta, r.to),
        };
        if let Some(c) = r.conflict {
            s.push_str(&format!(" (reconciled with backfill data from dose {c})"));
        }
        if let Some(stop) = r.stop {
            s.push_str(&format!("; stage 1 stops ({stop:?})"));
        }
        s
    }

    /// Analysis set by arm. `final_only` keeps patients with both outcomes.
    fn analysis(&self, final_only: bool) -> Option<(Stage2Doses, [ArmData; 2], [Vec<&Patient>; 2])> {
        let s2 = self.stage2.as_ref()?;
        let doses = s2.plan.doses;
        let use_stage1 = s2.plan.mode == Stage2Mode::Conditional;
        let mut data = [ArmData::default(); 2];
        let mut members: [Vec<&Patient>; 2] = [Vec::new(), Vec::new()];
        for p in &self.patients {
            let arm = match p.stage {
                2 => p.arm,
                _ if use_stage1 && p.eligible => doses.arm_of(p.dose),
                _ => None,
            };
            let Some(arm) = arm else { continue };
            let Some(dlt) = p.dlt else { continue };
            if final_only && p.response.is_none() {
                continue;
            }
            data[arm.index()].add(dlt, p.response == Some(true));
            members[arm.index()].push(p);
        }
        Some((doses, data, members))
    }

    // Commands.

    pub fn enroll(&self, covariates: &[usize], eligible: bool, now: u64) -> Result<(Self, Vec<TrialEvent>, Enrollment)> {
        self.spec.check(covariates).map_err(|e| ConductError::Validation(e.to_string()))?;
        let patient_id = self.patients.len() as u32;
        match self.stage {
            Stage::Stage1 => {
                let a = self.stage1.assign();
                let dose = match a {
                    Assignment::EscalationCohort(j) | Assignment::Backfill(j) => j,
                    Assignment::NotEnrolled => {
                        let advisory = if self.stage1.is_stopped() {
                            "stage 1 has stopped; advance to stage 2 once all assessments are in"
                        } else {
                            "no escalation slot or backfill dose is open; patient not enrolled"
                        };
                        let note = EventKind::DecisionTaken(DecisionNote::Assignment {
                            assignment: Some(Assignment::NotEnrolled),
                            arm: None,
                            omega_low: None,
                            omega_high: None,
                        });
                        let (next, events) = self.execute(note, now)?;
                        let e = Enrollment {
                            enrolled: false,
                            patient_id: None,
                            stage: 1,
                            dose: None,
                            assignment: Some(a),
                            arm: None,
                            allocation: None,
                            advisory: Some(advisory.into()),
                        };
                        return Ok((next, events, e));
                    }
                };
                let kind = EventKind::PatientEnrolled {
                    patient_id,
                    stage: 1,
                    covariates: covariates.to_vec(),
                    eligible,
                    dose,
                    assignment: Some(a),
                    arm: None,
                    draw: None,
                };
                let (next, events) = self.execute(kind, now)?;
                let e = Enrollment {
                    enrolled: true,
                    patient_id: Some(patient_id),
                    stage: 1,
                    dose: Some(dose),
                    assignment: Some(a),
                    arm: None,
                    allocation: None,
                    advisory: None,
                };
                Ok((next, events, e))
            }
            Stage::Stage2 => {
                let (arm, draw, allocation) = self.next_allocation(covariates)?;
                let dose = self.stage2.as_ref().expect("stage 2 state").plan.doses.dose(arm);
                let kind = EventKind::PatientEnrolled {
                    patient_id,
                    stage: 2,
                    covariates: covariates.to_vec(),
                    eligible,
                    dose,
                    assignment: None,
                    arm: Some(arm),
                    draw,
                };
                let (next, events) = self.execute(kind, now)?;
                let e = Enrollment {
                    enrolled: true,
                    patient_id: Some(patient_id),
                    stage: 2,
                    dose: Some(dose),
                    assignment: None,
                    arm: Some(arm),
                    allocation,
                    advisory: None,
                };
                Ok((next, events, e))
            }
            s => Err(ConductError::State(format!("trial is {s:?}"))),
        }
    }

    /// Record a DLT assessment, optionally with the response. A response left
    /// open can be supplied later with the same DLT value. An identical
    /// resubmission changes nothing.
    pub fn record_outcome(
        &self,
        patient_id: u32,
        dlt: bool,
        response: Option<bool>,
        now: u64,
    ) -> Result<(Self, Vec<TrialEvent>)> {
        if let Some(p) = self.patients.get(patient_id as usize) {
            if p.dlt == Some(dlt) && (response.is_none() || p.response == response) {
                return Ok((self.clone(), Vec::new()));
            }
        }
        self.check_outcome(patient_id, dlt, response)?;
        self.execute(EventKind::OutcomeRecorded { patient_id, dlt, response }, now)
    }

    /// Move to stage 2 with the default doses or an override. Without an MTD
    /// and without an override the trial is terminated.
    pub fn advance(&self, override_doses: Option<Stage2Doses>, now: u64) -> Result<(Self, Vec<TrialEvent>)> {
        self.check_advance()?;
        let default = self.stage1.select_mtd().map(Stage2Doses::from_mtd);
        let Some(doses) = override_doses.or(default) else {
            let kind = EventKind::TrialCompleted { outcome: Completion::Terminated { reason: self.stage1.stop_reason() } };
            return self.execute(kind, now);
        };
        let plan = self.plan(doses)?;
        let kind = EventKind::StageAdvanced {
            doses,
            overridden: default != Some(doses),
            n1_low: plan.n1_low,
            n1_high: plan.n1_high,
            quota: plan.quota,
            warnings: self.override_warnings(doses),
        };
        self.execute(kind, now)
    }

    // Queries.

    pub fn trial_id(&self) -> &str {
        &self.trial_id
    }

    pub fn design(&self) -> &DesignConfig {
        &self.design
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn stage1(&self) -> &Stage1 {
        &self.stage1
    }

    pub fn summary(&self) -> DecisionSummary {
        let s1 = self.stage1.summary();
        let (lambda_e, lambda_d) = match self.stage1.escalator() {
            Escalator::Boin(p) => (Some(p.lambda_e), Some(p.lambda_d)),
            Escalator::Blrm(_) => (None, None),
        };
        DecisionSummary {
            stage: self.stage,
            current_dose: s1.current_dose,
            cohort: s1.cohort,
            open_backfill: s1.open_backfill,
            eliminated: s1.eliminated,
            pending: s1.pending,
            stop: s1.stop,
            ready_to_advance: self.check_advance().is_ok(),
            next_assignment: (self.stage == Stage::Stage1).then(|| self.stage1.assign()),
            last_decision: self.last_decision,
            last_rule: self.last_rule.clone(),
            lambda_e,
            lambda_d,
            stage2: self.stage2.as_ref().map(|s| Stage2Progress {
                doses: s.plan.doses,
                mode: s.plan.mode,
                quota: s.plan.quota,
                enrolled: s.enrolled,
                n1_low: s.plan.n1_low,
                n1_high: s.plan.n1_high,
            }),
        }
    }

    pub fn view(&self) -> StateView {
        StateView {
            trial_id: self.trial_id.clone(),
            design_id: self.design_id.clone(),
            design: self.design.clone(),
            seed: self.seed,
            seq: self.seq,
            summary: self.summary(),
            stage1: self.stage1.summary(),
            patients: self.patients.clone(),
            completion: self.completion,
            obd: self.obd.clone(),
        }
    }

    /// OBD report; partial, with caveats, until the trial completes.
    pub fn report(&self) -> Result<ObdReport> {
        let mut caveats = Vec::new();
        let mut report = ObdReport {
            trial_id: self.trial_id.clone(),
            stage: self.stage,
            is_final: self.stage == Stage::Completed,
            caveats: Vec::new(),
            doses: None,
            obd_margin: None,
            obd_utility: None,
            admissibility: None,
            efficacy: None,
            posterior_utility: None,
            data: None,
            balance: None,
        };
        let Some((doses, data, members)) = self.analysis(true) else {
            caveats.push(match self.stage {
                Stage::Terminated => "trial terminated without an MTD: no OBD".to_string(),
                _ => "stage 2 has not started".to_string(),
            });
            report.caveats = caveats;
            return Ok(report);
        };
        if let Some(s2) = &self.stage2 {
            if s2.enrolled < s2.plan.quota {
                caveats.push(format!("stage-2 quota not reached: {} of {}", s2.enrolled, s2.plan.quota));
            }
        }
        let open = self.patients.iter().filter(|p| !p.is_final()).count();
        if open > 0 {
            caveats.push(format!("{open} patients without final outcomes are excluded"));
        }
        let obd = match &self.obd {
            Some(o) => o.clone(),
            None => evaluate_obd(&self.design, doses, data[0], data[1])?,
        };
        if obd.margin.is_none() && obd.utility.is_none() {
            caveats.push("no OBD: neither dose is admissible".into());
        }
        let mut factors: Vec<Vec<[u32; 2]>> = self.spec.factors.iter().map(|f| vec![[0; 2]; f.levels]).collect();
        for (a, ps) in members.iter().enumerate() {
            for p in ps {
                for (k, &level) in p.covariates.iter().enumerate() {
                    factors[k][level][a] += 1;
                }
            }
        }
        report.caveats = caveats;
        report.doses = Some(doses);
        report.obd_margin = obd.margin;
        report.obd_utility = obd.utility;
        report.admissibility = Some(obd.admissibility);
        report.efficacy = Some(obd.efficacy);
        report.posterior_utility = Some(obd.posterior_utility);
        report.data = Some(obd.data);
        report.balance = Some(BalanceTable { totals: [members[0].len() as u32, members[1].len() as u32], factors });
        Ok(report)
    }
}

fn kind_name(k: &EventKind) -> &'static str {
    match k {
        EventKind::TrialCreated { .. } => "TrialCreated",
        EventKind::PatientEnrolled { .. } => "PatientEnrolled",
        EventKind::OutcomeRecorded { .. } => "OutcomeRecorded",
        EventKind::DecisionTaken(_) => "DecisionTaken",
        EventKind::StageAdvanced { .. } => "StageAdvanced",
        EventKind::DoseClosed { .. } => "DoseClosed",
        EventKind::TrialCompleted { .. } => "TrialCompleted",
    }
}
