//! JSON Schemas of the API bodies and the event log.

use schemars::{schema_for, Schema};

use bard_core::config::DesignConfig;

use crate::event::TrialEvent;
use crate::http::{AdvanceRequest, EnrollRequest, OutcomeRequest, Problem};
use crate::service::{AdvanceResponse, Boundaries, CreateTrial, DesignCreated, EnrollResponse};
use crate::state::{DecisionSummary, ObdReport, StateView};

/// File stem and schema of every published document.
pub fn schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("design", schema_for!(DesignConfig)),
        ("design-created", schema_for!(DesignCreated)),
        ("boundaries", schema_for!(Boundaries)),
        ("create-trial", schema_for!(CreateTrial)),
        ("enroll-request", schema_for!(EnrollRequest)),
        ("enroll-response", schema_for!(EnrollResponse)),
        ("outcome-request", schema_for!(OutcomeRequest)),
        ("decision-summary", schema_for!(DecisionSummary)),
        ("advance-request", schema_for!(AdvanceRequest)),
        ("advance-response", schema_for!(AdvanceResponse)),
        ("state", schema_for!(StateView)),
        ("report", schema_for!(ObdReport)),
        ("event", schema_for!(TrialEvent)),
        ("problem", schema_for!(Problem)),
    ]
}

/// Pretty JSON text of a schema, as written to disk.
pub fn render(schema: &Schema) -> String {
    let mut text = serde_json::to_string_pretty(schema).expect("schema serializes");
    text.push('\n');
    text
}
