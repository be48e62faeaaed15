//! Optimal biological dose selection between the two stage-2 arms.

use serde::{Deserialize, Serialize};

use crate::error::{BardError, Result};
use crate::minimization::Arm;
use crate::stats::{dirichlet_mean_utility, BetaPosterior, DirichletPosterior};

/// Utility of (tox, no-eff), (no-tox, no-eff), (tox, eff), (no-tox, eff).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(transparent)]
pub struct UtilityTable(pub [f64; 4]);

impl Default for UtilityTable {
    fn default() -> Self {
        Self([0.0, 30.0, 50.0, 100.0])
    }
}

impl UtilityTable {
    pub fn validate(&self) -> Result<()> {
        let u = self.0;
        if u.iter().any(|x| !x.is_finite()) || u[0] > u[2] || u[1] > u[3] {
            return Err(BardError::param(format!("utility table {u:?} must be finite with u1 <= u3, u2 <= u4")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum MarginRule {
    /// Select the lower dose when `pE_low - pE_high >= -delta`.
    #[default]
    NonInferiority,
    /// Select the lower dose when `pE_low - pE_high >= delta`.
    Superiority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct GatingParams {
    pub phi_t: f64,
    pub phi_e: f64,
    pub c_t: f64,
    pub c_e: f64,
    pub delta: f64,
    #[serde(default)]
    pub margin_rule: MarginRule,
}

impl Default for GatingParams {
    fn default() -> Self {
        Self { phi_t: 0.3, phi_e: 0.2, c_t: 0.9, c_e: 0.95, delta: 0.05, margin_rule: MarginRule::NonInferiority }
    }
}

impl GatingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("phi_t", self.phi_t), ("phi_e", self.phi_e), ("c_t", self.c_t), ("c_e", self.c_e), ("delta", self.delta)]
        {
            if !(0.0 < v && v < 1.0) {
                return Err(BardError::param(format!("{name} = {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Outcome data of one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ArmData {
    pub n: u32,
    pub dlt: u32,
    pub responses: u32,
    /// Joint outcome counts in utility-table order.
    pub outcomes: [u32; 4],
}

impl ArmData {
    pub fn add(&mut self, dlt: bool, response: bool) {
        self.n += 1;
        self.dlt += u32::from(dlt);
        self.responses += u32::from(response);
        self.outcomes[outcome_index(dlt, response)] += 1;
    }

    pub fn efficacy_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| f64::from(self.responses) / f64::from(self.n))
    }

    pub fn toxicity_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| f64::from(self.dlt) / f64::from(self.n))
    }
}

pub fn outcome_index(dlt: bool, response: bool) -> usize {
    match (dlt, response) {
        (true, false) => 0,
        (false, false) => 1,
        (true, true) => 2,
        (false, true) => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Admissibility {
    pub safe: bool,
    pub effective: bool,
    /// Pr(p_T > phi_T | data), after isotonic adjustment when applied.
    pub tox_tail: f64,
    /// Pr(p_E < phi_E | data).
    pub eff_tail: f64,
}

impl Admissibility {
    pub fn ok(&self) -> bool {
        self.safe && self.effective
    }
}

/// Safety and efficacy gates for one dose from `(y_T, n)` and `(y_E, n)`,
/// with uniform Beta priors.
pub fn admissible(tox: (u32, u32), eff: (u32, u32), gating: &GatingParams) -> Admissibility {
    let tox_tail = BetaPosterior::from_uniform_prior(tox.0, tox.1).sf(gating.phi_t);
    let eff_tail = BetaPosterior::from_uniform_prior(eff.0, eff.1).cdf(gating.phi_e);
    Admissibility { safe: tox_tail <= gating.c_t, effective: eff_tail <= gating.c_e, tox_tail, eff_tail }
}

/// Gates for both arms. When the lower dose looks more toxic than the
/// higher one, both safety tails come from the pooled toxicity data.
pub fn admissible_pair(low: &ArmData, high: &ArmData, gating: &GatingParams) -> [Admissibility; 2] {
    let mut a_low = admissible((low.dlt, low.n), (low.responses, low.n), gating);
    let mut a_high = admissible((high.dlt, high.n), (high.responses, high.n), gating);
    if let (Some(pl), Some(ph)) = (low.toxicity_rate(), high.toxicity_rate()) {
        if pl > ph {
            let pooled = BetaPosterior::from_uniform_prior(low.dlt + high.dlt, low.n + high.n).sf(gating.phi_t);
            for a in [&mut a_low, &mut a_high] {
                a.tox_tail = pooled;
                a.safe = pooled <= gating.c_t;
            }
        }
    }
    [a_low, a_high]
}

/// Efficacy-margin rule. `ok` holds the admissibility of (low, high).
pub fn select_obd_margin(pe_low: f64, pe_high: f64, gating: &GatingParams, ok: [bool; 2]) -> Option<Arm> {
    match ok {
        [true, true] => {
            let threshold = match gating.margin_rule {
                MarginRule::NonInferiority => -gating.delta,
                MarginRule::Superiority => gating.delta,
            };
            // Rounding slack so a difference of exactly -delta counts.
            if pe_low - pe_high >= threshold - 1e-12 {
                Some(Arm::Low)
            } else {
                Some(Arm::High)
            }
        }
        [true, false] => Some(Arm::Low),
        [false, true] => Some(Arm::High),
        [false, false] => None,
    }
}

/// Posterior mean utility of one arm.
pub fn posterior_utility(outcomes: [u32; 4], utility: &UtilityTable, prior: [f64; 4]) -> Result<f64> {
    let post = DirichletPosterior::update(prior, outcomes)?;
    Ok(dirichlet_mean_utility(&post, &utility.0))
}

/// Utility rule: the admissible arm with the larger posterior mean utility
/// (lower dose on ties).
pub fn select_obd_utility(
    low: [u32; 4],
    high: [u32; 4],
    utility: &UtilityTable,
    prior: [f64; 4],
    ok: [bool; 2],
) -> Result<Option<Arm>> {
    let u_low = posterior_utility(low, utility, prior)?;
    let u_high = posterior_utility(high, utility, prior)?;
    Ok(match ok {
        [true, true] => Some(if u_low >= u_high - 1e-12 { Arm::Low } else { Arm::High }),
        [true, false] => Some(Arm::Low),
        [false, true] => Some(Arm::High),
        [false, false] => None,
    })
}

/// Expected utility of a dose with toxicity `p_t` and efficacy `p_e`,
/// treating the two outcomes as independent.
pub fn true_utility(p_t: f64, p_e: f64, utility: &UtilityTable) -> f64 {
    let u = utility.0;
    u[0] * p_t * (1.0 - p_e) + u[1] * (1.0 - p_t) * (1.0 - p_e) + u[2] * p_t * p_e + u[3] * (1.0 - p_t) * p_e
}
