//! Backfill bookkeeping: which doses below the current escalation dose may
//! take extra patients, and where the next stage-1 arrival goes.

use serde::{Deserialize, Serialize};

use crate::boin::pooled_rate;
use crate::tally::DoseTally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Boin,
    Blrm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BackfillDose {
    pub open: bool,
    /// Closed for toxicity; re-opens when the condition clears.
    pub temporarily_closed: bool,
    /// Reached the sample-size cap; absorbing.
    pub permanently_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BackfillState {
    pub doses: Vec<BackfillDose>,
    pub n_cap: u32,
    pub engine: EngineKind,
}

/// Toxicity closing rule (a), which differs between the two engines.
#[derive(Debug, Clone, Copy)]
pub enum ClosingRule<'a> {
    /// Close when both the dose's own rate and the rate pooled with the next
    /// dose exceed `lambda_d`.
    Boin { lambda_d: f64 },
    /// Close when POD of the dose is at least `eta`.
    Blrm { pod: &'a [f64], eta: f64 },
}

impl BackfillState {
    pub fn new(dose_count: usize, n_cap: u32, engine: EngineKind) -> Self {
        Self { doses: vec![BackfillDose::default(); dose_count], n_cap, engine }
    }

    pub fn is_open(&self, b: usize) -> bool {
        self.doses[b].open
    }

    pub fn open_doses(&self) -> Vec<usize> {
        (0..self.doses.len()).filter(|&b| self.doses[b].open).collect()
    }

    pub fn highest_open(&self) -> Option<usize> {
        (0..self.doses.len()).rev().find(|&b| self.doses[b].open)
    }
}

/// Re-evaluate which doses are open for backfill given the tally and the
/// current escalation dose `c`.
///
/// A dose `b` is open iff `b < c`, a response has been observed at `b` or a
/// lower dose, it is not eliminated, not closed by either closing rule, and
/// has room below the cap.
pub fn refresh_backfill(state: &mut BackfillState, tally: &DoseTally, c: usize, rule: ClosingRule<'_>) {
    let mut active = false;
    for b in 0..state.doses.len() {
        let rec = tally.dose(b);
        active |= rec.responses > 0;

        if rec.evaluated >= state.n_cap {
            state.doses[b].permanently_closed = true;
        }
        let temp = match rule {
            ClosingRule::Boin { lambda_d } => {
                let own = rec.dlt_rate().is_some_and(|r| r > lambda_d);
                let next = (b + 1).min(tally.len() - 1);
                own && pooled_rate(tally, b, next).is_ok_and(|q| q > lambda_d)
            }
            ClosingRule::Blrm { pod, eta } => pod[b] >= eta,
        };
        let slot = &mut state.doses[b];
        slot.temporarily_closed = temp;
        slot.open = b < c
            && active
            && !rec.eliminated
            && !slot.permanently_closed
            && !slot.temporarily_closed
            && rec.enrolled < state.n_cap;
    }
}

/// Where the next stage-1 arrival is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "kind", content = "dose", rename_all = "snake_case")]
pub enum Assignment {
    EscalationCohort(usize),
    Backfill(usize),
    NotEnrolled,
}

/// Escalation cohort first, then the highest open backfill dose.
pub fn assign_patient(state: &BackfillState, cohort_has_slot: bool, c: usize) -> Assignment {
    if cohort_has_slot {
        Assignment::EscalationCohort(c)
    } else if let Some(b) = state.highest_open() {
        Assignment::Backfill(b)
    } else {
        Assignment::NotEnrolled
    }
}
