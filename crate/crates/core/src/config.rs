//! Design, timing and run configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backfill::EngineKind;
use crate::blrm::BlrmParams;
use crate::boin::{boin_boundaries, BoinParams, EliminationTiming, TieBreak};
use crate::error::{BardError, Result};
use crate::minimization::CovariateSpec;
use crate::obd::{GatingParams, UtilityTable};
use crate::scenario::{ScenarioTruth, COVARIATES};

/// How stage 2 is populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// Seed minimization with stage-1 patients and enroll the remainder.
    #[default]
    Conditional,
    /// N2 fresh patients, 1:1 in permuted blocks of two; stage-1 data unused.
    SimpleRandom,
    /// N2 fresh patients by minimization without stage-1 seeding.
    PocockSimonFull,
}

/// Design variants compared in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    #[default]
    Bard,
    Sr,
    PocockSimonFull,
}

impl std::str::FromStr for Comparator {
    type Err = BardError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bard" => Ok(Self::Bard),
            "sr" => Ok(Self::Sr),
            "pocock_simon_full" | "ps" | "pocock_simon" => Ok(Self::PocockSimonFull),
            other => Err(BardError::config(format!("unknown comparator {other:?} (bard, sr, pocock-simon-full)"))),
        }
    }
}

/// BOIN settings. Boundaries default to those implied by `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BoinConfig {
    pub lambda_e: Option<f64>,
    pub lambda_d: Option<f64>,
    pub elimination_cutoff: f64,
    pub min_n_eliminate: u32,
    pub n_stop: u32,
    pub tie_break: TieBreak,
    pub elimination: EliminationTiming,
}

impl Default for BoinConfig {
    fn default() -> Self {
        Self {
            lambda_e: None,
            lambda_d: None,
            elimination_cutoff: 0.95,
            min_n_eliminate: 3,
            n_stop: 9,
            tie_break: TieBreak::default(),
            elimination: EliminationTiming::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub engine: EngineKind,
    /// Target DLT rate.
    pub phi: f64,
    pub n_doses: usize,
    pub cohort_size: u32,
    /// Escalation-cohort patients after which stage 1 stops.
    pub max_n1: u32,
    pub backfill: bool,
    pub n_cap: u32,
    pub boin: BoinConfig,
    pub blrm: BlrmParams,
    /// Planned stage-2 size N2.
    pub n2: u32,
    pub r: f64,
    pub max_per_arm: Option<u32>,
    /// Covariates, by index, balanced by the stage-2 randomizer.
    pub balance_factors: Vec<usize>,
    pub stage2: Stage2Mode,
    pub gating: GatingParams,
    pub utility: UtilityTable,
    pub dirichlet_prior: [f64; 4],
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            engine: EngineKind::Boin,
            phi: 0.25,
            n_doses: 5,
            cohort_size: 3,
            max_n1: 30,
            backfill: true,
            n_cap: 12,
            boin: BoinConfig::default(),
            blrm: BlrmParams::default(),
            n2: 40,
            r: 0.95,
            max_per_arm: None,
            balance_factors: vec![0, 1],
            stage2: Stage2Mode::Conditional,
            gating: GatingParams::default(),
            utility: UtilityTable::default(),
            dirichlet_prior: [1.0; 4],
        }
    }
}

impl DesignConfig {
    /// Named presets: `bard-boin`, `bard-blrm`, `boin-sr`, `blrm-sr`, with an
    /// optional `-3` suffix for the three-dose ladder.
    pub fn preset(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let (base, three) = match lower.strip_suffix("-3") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let mut d = match base {
            "bard-boin" | "boin" => Self::default(),
            "bard-blrm" | "blrm" => Self { engine: EngineKind::Blrm, ..Self::default() },
            "boin-sr" => comparator_design(&Self::default(), Comparator::Sr),
            "blrm-sr" => comparator_design(&Self { engine: EngineKind::Blrm, ..Self::default() }, Comparator::Sr),
            _ => {
                return Err(BardError::config(format!(
                    "unknown design {name:?}; known: bard-boin, bard-blrm, boin-sr, blrm-sr (optionally with -3)"
                )))
            }
        };
        if three {
            d.n_doses = 3;
            d.max_n1 = 18;
            d.blrm.dosages.truncate(3);
        }
        Ok(d)
    }

    pub fn boin_params(&self) -> Result<BoinParams> {
        let (e, d) = boin_boundaries(self.phi)?;
        let p = BoinParams {
            phi: self.phi,
            lambda_e: self.boin.lambda_e.unwrap_or(e),
            lambda_d: self.boin.lambda_d.unwrap_or(d),
            elimination_cutoff: self.boin.elimination_cutoff,
            min_n_eliminate: self.boin.min_n_eliminate,
            n_stop: self.boin.n_stop,
            tie_break: self.boin.tie_break,
            elimination: self.boin.elimination,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn covariate_spec(&self) -> CovariateSpec {
        CovariateSpec::binary(self.balance_factors.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_doses == 0 {
            return Err(BardError::config("design.n_doses must be positive"));
        }
        if self.cohort_size == 0 || self.max_n1 == 0 {
            return Err(BardError::config("design.cohort_size and design.max_n1 must be positive"));
        }
        if self.n_cap == 0 {
            return Err(BardError::config("design.n_cap must be positive"));
        }
        if !(0.5 < self.r && self.r <= 1.0) {
            return Err(BardError::config(format!("design.r = {} outside (0.5, 1]", self.r)));
        }
        if let Some(&k) = self.balance_factors.iter().find(|&&k| k >= COVARIATES) {
            return Err(BardError::config(format!("design.balance_factors: covariate {k} out of range 0..{COVARIATES}")));
        }
        match self.engine {
            EngineKind::Boin => {
                self.boin_params()?;
            }
            EngineKind::Blrm => {
                self.blrm.validate()?;
                if self.blrm.dosages.len() != self.n_doses {
                    return Err(BardError::config(format!(
                        "design.blrm.dosages has {} entries but design.n_doses = {}",
                        self.blrm.dosages.len(),
                        self.n_doses
                    )));
                }
            }
        }
        self.gating.validate()?;
        self.utility.validate()?;
        if self.dirichlet_prior.iter().any(|&a| !(a > 0.0)) {
            return Err(BardError::config("design.dirichlet_prior entries must be positive"));
        }
        Ok(())
    }
}

/// Variant of `design` for one of the simulated comparators. SR runs stage 1
/// without backfill and enrolls N2 fresh patients; Pocock-Simon-full keeps
/// stage 1 as is and enrolls N2 fresh patients by minimization.
pub fn comparator_design(design: &DesignConfig, mode: Comparator) -> DesignConfig {
    let mut d = design.clone();
    match mode {
        Comparator::Bard => d.stage2 = Stage2Mode::Conditional,
        Comparator::Sr => {
            d.stage2 = Stage2Mode::SimpleRandom;
            d.backfill = false;
        }
        Comparator::PocockSimonFull => d.stage2 = Stage2Mode::PocockSimonFull,
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Poisson,
    /// Evenly spaced arrivals at the accrual rate.
    Deterministic,
}

/// What happens to a stage-1 arrival with nowhere to go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Turned away.
    #[default]
    NotEnrolled,
    /// Held until the next escalation cohort opens, up to one cohort.
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Patients per month.
    pub accrual_rate: f64,
    /// Months.
    pub dlt_window: f64,
    /// Months.
    pub response_window: f64,
    pub arrivals: ArrivalProcess,
    pub overflow: OverflowPolicy,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            accrual_rate: 3.0,
            dlt_window: 1.0,
            response_window: 1.0,
            arrivals: ArrivalProcess::Poisson,
            overflow: OverflowPolicy::NotEnrolled,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("accrual_rate", self.accrual_rate), ("dlt_window", self.dlt_window), ("response_window", self.response_window)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BardError::config(format!("timing.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scenario block: a preset name, optionally overridden field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub dlt_rates: Option<Vec<f64>>,
    pub beta0: Option<Vec<f64>>,
    pub cov_betas: Option<[f64; COVARIATES]>,
    pub cov_prevalence: Option<[f64; COVARIATES]>,
    /// One-based.
    pub true_obd: Option<usize>,
    /// One-based.
    pub true_mtd: Option<usize>,
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<ScenarioTruth> {
        let mut s = match &self.preset {
            Some(p) => ScenarioTruth::preset(p)?,
            None => {
                let (Some(dlt), Some(b0), Some(obd), Some(mtd)) = (&self.dlt_rates, &self.beta0, self.true_obd, self.true_mtd)
                else {
                    return Err(BardError::config(
                        "scenario needs either `preset` or all of dlt_rates, beta0, true_obd, true_mtd",
                    ));
                };
                let mut s = ScenarioTruth::preset("s1")?;
                s.dlt_rates = dlt.clone();
                s.beta0 = b0.clone();
                s.true_obd = one_based(obd, "true_obd")?;
                s.true_mtd = one_based(mtd, "true_mtd")?;
                s.name = "custom".into();
                s
            }
        };
        if let Some(n) = &self.name {
            s.name = n.clone();
        }
        if let Some(v) = &self.dlt_rates {
            s.dlt_rates = v.clone();
        }
        if let Some(v) = &self.beta0 {
            s.beta0 = v.clone();
        }
        if let Some(v) = self.cov_betas {
            s.cov_betas = v;
        }
        if let Some(v) = self.cov_prevalence {
            s.cov_prevalence = v;
        }
        if let Some(v) = self.true_obd {
            s.true_obd = one_based(v, "true_obd")?;
        }
        if let Some(v) = self.true_mtd {
            s.true_mtd = one_based(v, "true_mtd")?;
        }
        s.validate()?;
        Ok(s)
    }
}

fn one_based(v: usize, field: &str) -> Result<usize> {
    v.checked_sub(1).ok_or_else(|| BardError::config(format!("scenario.{field} is one-based; got 0")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reps: u32,
    pub seed: Option<u64>,
    /// Worker threads; 0 means all available cores.
    pub parallelism: usize,
    pub comparator: Comparator,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { reps: 1000, seed: None, parallelism: 0, comparator: Comparator::Bard }
    }
}

/// A complete simulation configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub design: DesignConfig,
    pub scenario: ScenarioConfig,
    pub timing: TimingModel,
    pub run: RunConfig,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BardError::config(e.to_string()))?;
        cfg.design.validate()?;
        cfg.timing.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BardError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| BardError::config(format!("{}: {e}", path.display())))
    }
}
