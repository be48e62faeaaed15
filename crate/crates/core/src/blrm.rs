//! Model-based escalation with backfill: PTT/POD decisions under
//! overdose control, all-toxic termination and MTD selection.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decision::Decision;
use crate::error::{BardError, Result};
use crate::stats::{BlrmModel, BlrmPrior, DoseScale, GridSpec, IntervalProbs};
use crate::tally::DoseTally;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BlrmParams {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Overdose-control cutoff: a dose is admissible when POD < eta.
    pub eta: f64,
    pub dosages: Vec<f64>,
    pub ref_dosage: f64,
    pub prior: BlrmPrior,
    #[serde(default)]
    pub dose_scale: DoseScale,
    #[serde(default)]
    pub grid: GridSpec,
    /// Patients a dose needs before it can be selected as the MTD.
    pub min_mtd_n: u32,
}

impl Default for BlrmParams {
    fn default() -> Self {
        Self {
            gamma1: 0.16,
            gamma2: 0.33,
            eta: 0.30,
            dosages: vec![10.0, 20.0, 50.0, 100.0, 200.0],
            ref_dosage: 50.0,
            prior: BlrmPrior::default(),
            dose_scale: DoseScale::LogRatio,
            grid: GridSpec::default(),
            min_mtd_n: 6,
        }
    }
}

impl BlrmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma1 && self.gamma1 < self.gamma2 && self.gamma2 < 1.0) {
            return Err(BardError::param("need 0 < gamma1 < gamma2 < 1"));
        }
        if !(0.0 < self.eta && self.eta < 1.0) {
            return Err(BardError::param("eta must lie in (0, 1)"));
        }
        self.prior.validate()
    }
}

/// Parameters plus the precomputed quadrature grid they imply.
#[derive(Debug, Clone)]
pub struct BlrmDesign {
    pub params: BlrmParams,
    model: Arc<BlrmModel>,
}

impl BlrmDesign {
    pub fn new(params: BlrmParams) -> Result<Self> {
        params.validate()?;
        let model = BlrmModel::new(params.prior, &params.dosages, params.ref_dosage, params.dose_scale, params.grid)?;
        Ok(Self { params, model: Arc::new(model) })
    }

    pub fn model(&self) -> &BlrmModel {
        &self.model
    }

    pub fn dose_count(&self) -> usize {
        self.model.dose_count()
    }

    /// Interval probabilities for every dose given `(dlt, evaluated)` counts.
    pub fn interval_probs(&self, counts: &[(u32, u32)]) -> Result<Vec<IntervalProbs>> {
        let post = self.model.posterior(counts)?;
        (0..self.dose_count()).map(|j| post.interval_probs(j, self.params.gamma1, self.params.gamma2)).collect()
    }

    pub fn tally_probs(&self, tally: &DoseTally) -> Result<Vec<IntervalProbs>> {
        self.interval_probs(&tally.evaluated_counts())
    }
}

/// Dose with the highest PTT among admissible doses (lower dose on ties).
pub fn best_admissible(probs: &[IntervalProbs], eta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in probs.iter().enumerate() {
        if p.overdose < eta && best.is_none_or(|(_, t)| p.target > t) {
            best = Some((j, p.target));
        }
    }
    best.map(|(j, _)| j)
}

/// Escalation decision at `c` from per-dose interval probabilities. Moves
/// are one level at a time regardless of how far away the best dose is.
pub fn blrm_decision(probs: &[IntervalProbs], c: usize, eta: f64) -> Decision {
    match best_admissible(probs, eta) {
        None => Decision::TerminateAllToxic,
        Some(j) if j > c => Decision::Escalate,
        Some(j) if j < c => Decision::DeEscalate,
        Some(_) => Decision::Stay,
    }
}

/// MTD among doses with at least `min_mtd_n` patients and POD < eta.
pub fn select_mtd_blrm(tally: &DoseTally, probs: &[IntervalProbs], params: &BlrmParams) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in probs.iter().enumerate() {
        if tally.dose(j).enrolled >= params.min_mtd_n && p.overdose < params.eta && best.is_none_or(|(_, t)| p.target > t) {
            best = Some((j, p.target));
        }
    }
    best.map(|(j, _)| j)
}

/// POD of the third dose for a stage-1 data fixture, the quantity behind the
/// model's tendency to stick at a dose after sparse toxic data.
pub fn rigidity_probe(design: &BlrmDesign, counts: &[(u32, u32)]) -> Result<f64> {
    let mut full = counts.to_vec();
    full.resize(design.dose_count(), (0, 0));
    Ok(design.interval_probs(&full)?[2].overdose)
}
