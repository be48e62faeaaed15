//! Ground truth for simulation: true DLT rates per dose and a logistic
//! covariate model for efficacy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BardError, Result};
use crate::stats::logistic;

/// Number of simulated binary prognostic factors.
pub const COVARIATES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ScenarioTruth {
    pub name: String,
    pub dlt_rates: Vec<f64>,
    /// Efficacy intercept per dose.
    pub beta0: Vec<f64>,
    #[serde(default = "default_cov_betas")]
    pub cov_betas: [f64; COVARIATES],
    #[serde(default = "default_prevalence")]
    pub cov_prevalence: [f64; COVARIATES],
    /// Zero-based index of the true optimal biological dose.
    pub true_obd: usize,
    /// Zero-based index of the true MTD.
    pub true_mtd: usize,
}

fn default_cov_betas() -> [f64; COVARIATES] {
    [1.7, -1.5, 0.4]
}

fn default_prevalence() -> [f64; COVARIATES] {
    [0.5; COVARIATES]
}

const FIVE_DOSE: [(&str, [f64; 5], [f64; 5], usize); 8] = [
    ("s1", [0.12, 0.25, 0.42, 0.49, 0.55], [-2.197, -1.099, -0.619, -0.201, 0.201], 1),
    ("s2", [0.04, 0.12, 0.25, 0.43, 0.63], [-2.442, -2.197, -1.099, -0.619, -0.201], 2),
    ("s3", [0.02, 0.06, 0.10, 0.25, 0.40], [-2.944, -2.442, -2.197, -1.099, -0.619], 3),
    ("s4", [0.02, 0.05, 0.08, 0.11, 0.25], [-3.892, -2.944, -2.442, -2.197, -1.099], 4),
    ("s5", [0.12, 0.25, 0.42, 0.49, 0.55], [-1.099, -1.099, -1.046, -1.046, -1.046], 0),
    ("s6", [0.04, 0.12, 0.25, 0.43, 0.63], [-2.197, -1.099, -1.099, -1.046, -1.046], 1),
    ("s7", [0.02, 0.06, 0.10, 0.25, 0.40], [-2.442, -2.197, -1.099, -1.099, -1.046], 2),
    ("s8", [0.02, 0.05, 0.08, 0.11, 0.25], [-2.944, -2.442, -2.197, -1.099, -1.099], 3),
];

const THREE_DOSE: [(&str, [f64; 3], [f64; 3], usize); 4] = [
    ("s3d1", [0.12, 0.25, 0.42], [-2.197, -1.099, -0.619], 1),
    ("s3d2", [0.04, 0.12, 0.25], [-2.442, -2.197, -1.099], 2),
    ("s3d3", [0.12, 0.25, 0.42], [-1.099, -1.099, -1.046], 0),
    ("s3d4", [0.04, 0.12, 0.25], [-2.197, -1.099, -1.099], 1),
];

/// Names of the built-in scenarios.
pub fn preset_names() -> Vec<&'static str> {
    FIVE_DOSE.iter().map(|s| s.0).chain(THREE_DOSE.iter().map(|s| s.0)).collect()
}

impl ScenarioTruth {
    pub fn preset(name: &str) -> Result<Self> {
        let build = |dlt: &[f64], b0: &[f64], obd: usize| {
            let true_mtd = dlt.iter().position(|&p| (p - 0.25).abs() < 1e-12).unwrap_or(0);
            ScenarioTruth {
                name: name.to_string(),
                dlt_rates: dlt.to_vec(),
                beta0: b0.to_vec(),
                cov_betas: default_cov_betas(),
                cov_prevalence: default_prevalence(),
                true_obd: obd,
                true_mtd,
            }
        };
        if let Some((_, dlt, b0, obd)) = FIVE_DOSE.iter().find(|s| s.0 == name) {
            return Ok(build(dlt, b0, *obd));
        }
        if let Some((_, dlt, b0, obd)) = THREE_DOSE.iter().find(|s| s.0 == name) {
            return Ok(build(dlt, b0, *obd));
        }
        Err(BardError::config(format!("unknown scenario preset {name:?}; known: {}", preset_names().join(", "))))
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.dlt_rates.len();
        if j == 0 || self.beta0.len() != j {
            return Err(BardError::config(format!("scenario {}: dlt_rates and beta0 lengths differ or are empty", self.name)));
        }
        let probs = self.dlt_rates.iter().chain(self.cov_prevalence.iter());
        if probs.clone().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BardError::config(format!("scenario {}: probabilities must lie in [0, 1]", self.name)));
        }
        if self.true_obd >= j || self.true_mtd >= j {
            return Err(BardError::config(format!("scenario {}: true dose index out of range", self.name)));
        }
        Ok(())
    }

    pub fn dose_count(&self) -> usize {
        self.dlt_rates.len()
    }

    /// Efficacy probability at dose `j` for binary covariates `v`.
    pub fn efficacy_prob(&self, j: usize, v: &[bool; COVARIATES]) -> f64 {
        let eta = self.beta0[j] + v.iter().zip(&self.cov_betas).map(|(&x, b)| if x { *b } else { 0.0 }).sum::<f64>();
        logistic(eta)
    }

    /// Efficacy probability at dose `j` averaged over the covariate
    /// distribution.
    pub fn marginal_efficacy(&self, j: usize) -> f64 {
        let mut total = 0.0;
        for mask in 0..(1u32 << COVARIATES) {
            let v: [bool; COVARIATES] = std::array::from_fn(|k| mask & (1 << k) != 0);
            let w: f64 = v.iter().zip(&self.cov_prevalence).map(|(&x, &p)| if x { p } else { 1.0 - p }).product();
            if w > 0.0 {
                total += w * self.efficacy_prob(j, &v);
            }
        }
        total
    }

    /// Draw a patient's covariates and latent outcome uniforms.
    pub fn draw_patient<R: Rng + ?Sized>(&self, rng: &mut R) -> PatientDraw {
        let u: [f64; COVARIATES] = std::array::from_fn(|_| rng.random());
        let covariates = std::array::from_fn(|k| u[k] < self.cov_prevalence[k]);
        PatientDraw { covariates, u_tox: rng.random(), u_eff: rng.random() }
    }

    /// Covariates plus DLT and response outcomes at dose `j`.
    pub fn sample_patient<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> SampledPatient {
        let draw = self.draw_patient(rng);
        SampledPatient { covariates: draw.covariates, dlt: draw.dlt(self, j), response: draw.response(self, j) }
    }
}

/// Covariates and the latent uniforms that fix a patient's outcome at any
/// dose. Outcomes are monotone couplings: the same patient is at least as
/// likely to have a DLT at a higher dose with a higher true rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct PatientDraw {
    pub covariates: [bool; COVARIATES],
    pub u_tox: f64,
    pub u_eff: f64,
}

impl PatientDraw {
    pub fn dlt(&self, truth: &ScenarioTruth, j: usize) -> bool {
        self.u_tox < truth.dlt_rates[j]
    }

    pub fn response(&self, truth: &ScenarioTruth, j: usize) -> bool {
        self.u_eff < truth.efficacy_prob(j, &self.covariates)
    }

    pub fn levels(&self) -> [usize; COVARIATES] {
        self.covariates.map(usize::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct SampledPatient {
    pub covariates: [bool; COVARIATES],
    pub dlt: bool,
    pub response: bool,
}
