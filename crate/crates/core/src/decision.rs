use serde::{Deserialize, Serialize};

/// Dose-movement decision of an escalation engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Escalate,
    Stay,
    DeEscalate,
    /// Every dose is deemed overly toxic; no MTD.
    TerminateAllToxic,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Escalate => "escalate",
            Decision::Stay => "stay",
            Decision::DeEscalate => "de-escalate",
            Decision::TerminateAllToxic => "terminate (all doses toxic)",
        })
    }
}
