//! Stage-1 state machine: staggered escalation cohorts with concurrent
//! backfill. Time-free; callers feed it enrollments and completed
//! assessments in the order they happen.

use serde::{Deserialize, Serialize};

use crate::backfill::{assign_patient, refresh_backfill, Assignment, BackfillState, ClosingRule, EngineKind};
use crate::blrm::{best_admissible, blrm_decision, select_mtd_blrm, BlrmDesign};
use crate::boin::{eliminate_overdoses, reconciled_decision, select_mtd_boin, BoinParams, EliminationTiming};
use crate::config::DesignConfig;
use crate::decision::Decision;
use crate::error::{BardError, Result};
use crate::stats::IntervalProbs;
use crate::tally::DoseTally;

/// Escalation engine with its precomputed state.
#[derive(Debug, Clone)]
pub enum Escalator {
    Boin(BoinParams),
    Blrm(BlrmDesign),
}

impl Escalator {
    pub fn from_design(design: &DesignConfig) -> Result<Self> {
        design.validate()?;
        Ok(match design.engine {
            EngineKind::Boin => Self::Boin(design.boin_params()?),
            EngineKind::Blrm => Self::Blrm(BlrmDesign::new(design.blrm.clone())?),
        })
    }

    pub fn kind(&self) -> EngineKind {
        match self {
            Self::Boin(_) => EngineKind::Boin,
            Self::Blrm(_) => EngineKind::Blrm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The escalation sample size reached its maximum.
    MaxSampleSize,
    /// `n_stop` patients at the current dose and the decision is to stay.
    StayAtNStop,
    /// Every dose is too toxic; no MTD.
    AllToxic,
}

/// The escalation cohort currently being filled or assessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Cohort {
    pub dose: usize,
    pub size: u32,
    pub filled: u32,
    pub completed: u32,
}

/// An escalation decision taken at the completion of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DecisionRecord {
    pub decision: Decision,
    pub from: usize,
    pub to: usize,
    /// Lowest conflicting backfill dose, when reconciliation applied.
    pub conflict: Option<usize>,
    pub stop: Option<StopReason>,
}

/// Snapshot of the stage-1 state for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Stage1Summary {
    pub current_dose: usize,
    pub cohort: Cohort,
    pub escalation_enrolled: u32,
    pub open_backfill: Vec<usize>,
    pub eliminated: Vec<usize>,
    pub pending: u32,
    pub stop: Option<StopReason>,
    pub tally: DoseTally,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_probs: Option<Vec<IntervalProbs>>,
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    escalator: Escalator,
    cohort_size: u32,
    max_n1: u32,
    backfill_enabled: bool,
    tally: DoseTally,
    backfill: BackfillState,
    current: usize,
    cohort: Cohort,
    escalation_enrolled: u32,
    stop: Option<StopReason>,
    probs: Option<Vec<IntervalProbs>>,
    /// Counts behind `probs`.
    probs_key: Vec<(u32, u32)>,
}

impl Stage1 {
    pub fn new(design: &DesignConfig, escalator: Escalator) -> Result<Self> {
        let n = design.n_doses;
        if let Escalator::Blrm(d) = &escalator {
            if d.dose_count() != n {
                return Err(BardError::config("BLRM dosages do not match the dose count"));
            }
        }
        let size = design.cohort_size.min(design.max_n1);
        let mut s = Self {
            cohort_size: design.cohort_size,
            max_n1: design.max_n1,
            backfill_enabled: design.backfill,
            tally: DoseTally::new(n),
            backfill: BackfillState::new(n, design.n_cap, escalator.kind()),
            escalator,
            current: 0,
            cohort: Cohort { dose: 0, size, filled: 0, completed: 0 },
            escalation_enrolled: 0,
            stop: None,
            probs: None,
            probs_key: Vec::new(),
        };
        s.refresh()?;
        Ok(s)
    }

    pub fn tally(&self) -> &DoseTally {
        &self.tally
    }

    pub fn backfill(&self) -> &BackfillState {
        &self.backfill
    }

    pub fn current_dose(&self) -> usize {
        self.current
    }

    pub fn cohort(&self) -> Cohort {
        self.cohort
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.is_some()
    }

    pub fn escalation_enrolled(&self) -> u32 {
        self.escalation_enrolled
    }

    pub fn escalator(&self) -> &Escalator {
        &self.escalator
    }

    /// Latest BLRM interval probabilities.
    pub fn interval_probs(&self) -> Option<&[IntervalProbs]> {
        self.probs.as_deref()
    }

    /// Assessments still outstanding.
    pub fn pending(&self) -> u32 {
        self.tally.iter().map(|d| d.enrolled - d.evaluated).sum()
    }

    /// Where the next arrival would be treated.
    pub fn assign(&self) -> Assignment {
        if self.stop.is_some() {
            return Assignment::NotEnrolled;
        }
        let slot = self.cohort.filled < self.cohort.size;
        if slot || self.backfill_enabled {
            assign_patient(&self.backfill, slot, self.current)
        } else {
            Assignment::NotEnrolled
        }
    }

    /// Enroll a patient under `assignment`, which must be what [`Self::assign`]
    /// currently returns.
    pub fn enroll(&mut self, assignment: Assignment) -> Result<()> {
        if assignment != self.assign() {
            return Err(BardError::Data(format!(
                "assignment {assignment:?} does not match the current rule ({:?})",
                self.assign()
            )));
        }
        match assignment {
            Assignment::EscalationCohort(j) => {
                self.tally.enroll(j, false);
                self.cohort.filled += 1;
                self.escalation_enrolled += 1;
            }
            Assignment::Backfill(b) => self.tally.enroll(b, true),
            Assignment::NotEnrolled => return Ok(()),
        }
        self.refresh()
    }

    /// Record a completed DLT assessment. `escalation` marks members of the
    /// current escalation cohort. Returns the escalation decision when this
    /// completion closes the cohort.
    pub fn complete(&mut self, dose: usize, escalation: bool, dlt: bool, response: bool) -> Result<Option<DecisionRecord>> {
        if dose >= self.tally.len() {
            return Err(BardError::param(format!("dose {} out of range", dose + 1)));
        }
        if escalation && (dose != self.cohort.dose || self.cohort.completed >= self.cohort.filled) {
            return Err(BardError::Data(format!("no pending escalation-cohort assessment at dose {}", dose + 1)));
        }
        self.tally.record(dose, dlt, response)?;
        if escalation {
            self.cohort.completed += 1;
        }
        self.refresh()?;
        self.maybe_decide()
    }

    /// An efficacy response whose window closes after the DLT window.
    pub fn late_response(&mut self, dose: usize) -> Result<()> {
        if dose >= self.tally.len() {
            return Err(BardError::param(format!("dose {} out of range", dose + 1)));
        }
        self.tally.record_late_response(dose);
        self.refresh()
    }

    /// MTD from all stage-1 data; `None` after all-toxic termination.
    pub fn select_mtd(&self) -> Option<usize> {
        if self.stop == Some(StopReason::AllToxic) {
            return None;
        }
        match &self.escalator {
            Escalator::Boin(p) => select_mtd_boin(&self.tally, p),
            Escalator::Blrm(d) => select_mtd_blrm(&self.tally, self.probs.as_deref()?, &d.params),
        }
    }

    pub fn summary(&self) -> Stage1Summary {
        Stage1Summary {
            current_dose: self.current,
            cohort: self.cohort,
            escalation_enrolled: self.escalation_enrolled,
            open_backfill: self.backfill.open_doses(),
            eliminated: (0..self.tally.len()).filter(|&j| self.tally.is_eliminated(j)).collect(),
            pending: self.pending(),
            stop: self.stop,
            tally: self.tally.clone(),
            interval_probs: self.probs.clone(),
        }
    }

    /// Re-derive eliminations, posterior summaries, the all-toxic flag and
    /// the backfill set from the tally.
    fn refresh(&mut self) -> Result<()> {
        match &self.escalator {
            Escalator::Boin(p) => {
                if p.elimination == EliminationTiming::Continuous {
                    apply_eliminations(&mut self.tally, p);
                }
                if self.tally.is_eliminated(0) {
                    self.stop = Some(StopReason::AllToxic);
                } else if self.tally.is_eliminated(self.current) {
                    // No more patients at an eliminated dose.
                    self.cohort.size = self.cohort.filled;
                }
            }
            Escalator::Blrm(d) => {
                let key = self.tally.evaluated_counts();
                if self.probs.is_none() || key != self.probs_key {
                    self.probs = Some(d.interval_probs(&key)?);
                    self.probs_key = key;
                }
                if self.probs.as_deref().and_then(|p| best_admissible(p, d.params.eta)).is_none() {
                    self.stop = Some(StopReason::AllToxic);
                }
            }
        }
        if !self.backfill_enabled || self.stop.is_some() {
            for d in &mut self.backfill.doses {
                d.open = false;
            }
            return Ok(());
        }
        let pod: Vec<f64>;
        let rule = match &self.escalator {
            Escalator::Boin(p) => ClosingRule::Boin { lambda_d: p.lambda_d },
            Escalator::Blrm(d) => {
                pod = self.probs.as_ref().map(|v| v.iter().map(|p| p.overdose).collect()).unwrap_or_default();
                ClosingRule::Blrm { pod: &pod, eta: d.params.eta }
            }
        };
        refresh_backfill(&mut self.backfill, &self.tally, self.current, rule);
        Ok(())
    }

    fn maybe_decide(&mut self) -> Result<Option<DecisionRecord>> {
        let c = self.cohort;
        if self.stop.is_some() || c.completed < c.filled || c.filled < c.size {
            return Ok(None);
        }
        let from = self.current;
        if let Escalator::Boin(p) = &self.escalator {
            if p.elimination == EliminationTiming::Cohort && apply_eliminations(&mut self.tally, p) {
                self.refresh()?;
                if self.stop.is_some() {
                    return Ok(None);
                }
            }
        }
        let top = self.tally.len() - 1;
        let (mut to, conflict) = match &self.escalator {
            Escalator::Boin(p) => match reconciled_decision(&self.tally, from, p) {
                Ok(mv) => (mv.target.unwrap_or(0), mv.conflict),
                Err(BardError::Deferred(_)) => (from, None),
                Err(e) => return Err(e),
            },
            Escalator::Blrm(d) => {
                let probs = self.probs.as_deref().unwrap_or_default();
                let to = match blrm_decision(probs, from, d.params.eta) {
                    Decision::Escalate => from + 1,
                    Decision::DeEscalate => from - 1,
                    _ => from,
                };
                (to, None)
            }
        };
        to = to.min(top);
        if let Some(l) = self.tally.lowest_eliminated() {
            to = to.min(l - 1);
        }
        let decision = match to.cmp(&from) {
            std::cmp::Ordering::Greater => Decision::Escalate,
            std::cmp::Ordering::Less => Decision::DeEscalate,
            std::cmp::Ordering::Equal => Decision::Stay,
        };

        let mut stop = None;
        if let Escalator::Boin(p) = &self.escalator {
            if decision == Decision::Stay && self.tally.dose(from).enrolled >= p.n_stop {
                stop = Some(StopReason::StayAtNStop);
            }
        }
        if stop.is_none() && self.escalation_enrolled >= self.max_n1 {
            stop = Some(StopReason::MaxSampleSize);
        }

        self.current = to;
        self.stop = stop;
        let size = self.cohort_size.min(self.max_n1.saturating_sub(self.escalation_enrolled));
        self.cohort = Cohort { dose: to, size, filled: 0, completed: 0 };
        self.refresh()?;
        Ok(Some(DecisionRecord { decision, from, to, conflict, stop }))
    }
}

/// Returns whether any dose was newly eliminated.
fn apply_eliminations(tally: &mut DoseTally, p: &BoinParams) -> bool {
    let before = tally.lowest_eliminated();
    if let Some(l) = eliminate_overdoses(tally, p).iter().position(|&f| f) {
        tally.eliminate_from(l);
    }
    tally.lowest_eliminated() != before
}
