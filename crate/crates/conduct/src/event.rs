//! Trial events. State is a fold over these and nothing else.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use bard_core::backfill::Assignment;
use bard_core::config::DesignConfig;
use bard_core::minimization::Arm;
use bard_core::stage1::{DecisionRecord, StopReason};
use bard_core::stage2::Stage2Doses;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TrialEvent {
    /// Contiguous from 1.
    pub seq: u64,
    /// Milliseconds since the Unix epoch. Not used by the fold.
    pub timestamp: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    TrialCreated {
        trial_id: String,
        design_id: Option<String>,
        design: DesignConfig,
        /// Seed of the stage-2 allocation stream.
        seed: u64,
    },
    PatientEnrolled {
        patient_id: u32,
        stage: u8,
        /// Levels of the balanced covariates.
        covariates: Vec<usize>,
        /// Whether the patient may join the stage-2 analysis.
        eligible: bool,
        dose: usize,
        /// Stage-1 route; absent in stage 2.
        assignment: Option<Assignment>,
        arm: Option<Arm>,
        /// Index into the allocation stream, when a draw was used.
        draw: Option<u64>,
    },
    OutcomeRecorded {
        patient_id: u32,
        dlt: bool,
        /// `None` while the efficacy assessment is still open.
        response: Option<bool>,
    },
    DecisionTaken(DecisionNote),
    StageAdvanced {
        doses: Stage2Doses,
        overridden: bool,
        n1_low: u32,
        n1_high: u32,
        quota: u32,
        warnings: Vec<String>,
    },
    DoseClosed {
        dose: usize,
        reason: CloseReason,
    },
    TrialCompleted {
        outcome: Completion,
    },
}

/// Audit record of a rule firing. Replay recomputes it and must agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionNote {
    Assignment { assignment: Option<Assignment>, arm: Option<Arm>, omega_low: Option<u32>, omega_high: Option<u32> },
    Escalation { record: DecisionRecord },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    /// Overdose rule (BOIN) or POD at least eta (BLRM).
    Eliminated,
    /// Backfill closed for good at the cap.
    BackfillCapReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Stage-2 quota enrolled and every outcome in.
    Completed,
    /// Stage 1 ended without an MTD.
    Terminated { reason: Option<StopReason> },
}
