//! Trial conduct over a data directory. Shared by the HTTP server and the
//! command line, so both reach identical decisions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bard_core::backfill::EngineKind;
use bard_core::boin::{decision_table, BoundaryRow};
use bard_core::config::DesignConfig;
use bard_core::stage2::Stage2Doses;

use crate::error::{ConductError, Result};
use crate::event::TrialEvent;
use crate::state::{DecisionSummary, Enrollment, ObdReport, Stage2Progress, StateView, TrialState};
use crate::store::{check_id, EventStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DesignCreated {
    pub id: String,
    pub design: DesignConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Boundaries {
    pub design_id: String,
    pub phi: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub rows: Vec<BoundaryRow>,
}

/// Body of a trial-creation request. Give exactly one of `design_id`,
/// `design` or `preset`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CreateTrial {
    pub trial_id: Option<String>,
    pub design_id: Option<String>,
    pub design: Option<DesignConfig>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EnrollResponse {
    pub enrollment: Enrollment,
    pub summary: DecisionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AdvanceResponse {
    pub plan: Option<Stage2Progress>,
    pub warnings: Vec<String>,
    pub summary: DecisionSummary,
}

pub struct Conduct {
    store: EventStore,
    trials: Mutex<HashMap<String, Arc<Mutex<TrialState>>>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Content-addressed design id.
pub fn design_id(design: &DesignConfig) -> String {
    let json = serde_json::to_vec(design).expect("design serializes");
    let digest = Sha256::digest(&json);
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("d-{hex}")
}

impl Conduct {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        Ok(Self { store: EventStore::open(dir)?, trials: Mutex::new(HashMap::new()) })
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    pub fn create_design(&self, design: DesignConfig) -> Result<DesignCreated> {
        design.validate().map_err(|e| ConductError::Validation(e.to_string()))?;
        let id = design_id(&design);
        self.store.save_design(&id, &design)?;
        Ok(DesignCreated { id, design })
    }

    pub fn design(&self, id: &str) -> Result<DesignConfig> {
        self.store.load_design(id)
    }

    /// BOIN decision table up to `n_cap + cohort_size` patients.
    pub fn boundaries(&self, id: &str) -> Result<Boundaries> {
        let design = self.store.load_design(id)?;
        if design.engine != EngineKind::Boin {
            return Err(ConductError::Validation("decision boundaries exist only for BOIN designs".into()));
        }
        let p = design.boin_params()?;
        Ok(Boundaries {
            design_id: id.to_string(),
            phi: p.phi,
            lambda_e: p.lambda_e,
            lambda_d: p.lambda_d,
            rows: decision_table(&p, design.n_cap + design.cohort_size),
        })
    }

    pub fn create_trial(&self, req: CreateTrial) -> Result<StateView> {
        let (design_id, design) = match (req.design_id, req.design, req.preset) {
            (Some(id), None, None) => {
                let d = self.store.load_design(&id)?;
                (Some(id), d)
            }
            (None, Some(d), None) => (Some(self.create_design(d.clone())?.id), d),
            (None, None, Some(name)) => {
                let d = DesignConfig::preset(&name).map_err(|e| ConductError::Validation(e.to_string()))?;
                (Some(self.create_design(d.clone())?.id), d)
            }
            _ => return Err(ConductError::Validation("give exactly one of design_id, design or preset".into())),
        };
        let trial_id = match req.trial_id {
            Some(id) => id,
            None => format!("t-{:016x}", rand::random::<u64>()),
        };
        check_id(&trial_id)?;
        let seed = req.seed.unwrap_or_else(rand::random);
        let (state, events) = TrialState::create(&trial_id, design_id, design, seed, now_ms())?;
        let mut trials = self.trials.lock().expect("trial map");
        self.store.create(&trial_id, &events)?;
        let view = state.view();
        trials.insert(trial_id, Arc::new(Mutex::new(state)));
        Ok(view)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<TrialState>>> {
        check_id(id)?;
        let mut trials = self.trials.lock().expect("trial map");
        if let Some(h) = trials.get(id) {
            return Ok(h.clone());
        }
        let state = TrialState::replay(&self.store.load(id)?)?;
        let h = Arc::new(Mutex::new(state));
        trials.insert(id.to_string(), h.clone());
        Ok(h)
    }

    /// Run a command under the trial's lock; persist, then publish the new state.
    fn command<T>(&self, id: &str, f: impl FnOnce(&TrialState, u64) -> Result<(TrialState, Vec<TrialEvent>, T)>) -> Result<T> {
        let h = self.handle(id)?;
        let mut state = h.lock().expect("trial lock");
        let (next, events, out) = f(&state, now_ms())?;
        self.store.append(id, &events)?;
        *state = next;
        Ok(out)
    }

    fn read<T>(&self, id: &str, f: impl FnOnce(&TrialState) -> Result<T>) -> Result<T> {
        let h = self.handle(id)?;
        let state = h.lock().expect("trial lock");
        f(&state)
    }

    pub fn enroll(&self, id: &str, covariates: &[usize], eligible: bool) -> Result<EnrollResponse> {
        self.command(id, |s, now| {
            let (next, events, enrollment) = s.enroll(covariates, eligible, now)?;
            let summary = next.summary();
            Ok((next, events, EnrollResponse { enrollment, summary }))
        })
    }

    pub fn record_outcome(&self, id: &str, patient_id: u32, dlt: bool, response: Option<bool>) -> Result<DecisionSummary> {
        self.command(id, |s, now| {
            let (next, events) = s.record_outcome(patient_id, dlt, response, now)?;
            let summary = next.summary();
            Ok((next, events, summary))
        })
    }

    pub fn advance(&self, id: &str, override_doses: Option<Stage2Doses>) -> Result<AdvanceResponse> {
        self.command(id, |s, now| {
            let (next, events) = s.advance(override_doses, now)?;
            let warnings = events
                .iter()
                .find_map(|e| match &e.kind {
                    crate::event::EventKind::StageAdvanced { warnings, .. } => Some(warnings.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            let summary = next.summary();
            Ok((next, events, AdvanceResponse { plan: summary.stage2.clone(), warnings, summary }))
        })
    }

    pub fn state(&self, id: &str) -> Result<StateView> {
        self.read(id, |s| Ok(s.view()))
    }

    pub fn summary(&self, id: &str) -> Result<DecisionSummary> {
        self.read(id, |s| Ok(s.summary()))
    }

    pub fn report(&self, id: &str) -> Result<ObdReport> {
        self.read(id, TrialState::report)
    }

    pub fn events(&self, id: &str) -> Result<Vec<TrialEvent>> {
        check_id(id)?;
        self.store.load(id)
    }
}
