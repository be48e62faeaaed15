//! Interval-based escalation with backfill: BOIN boundaries, overdose
//! elimination, conflict reconciliation between escalation and backfill
//! data, and isotonic MTD selection.

use serde::{Deserialize, Serialize};

use crate::decision::Decision;
use crate::error::{BardError, Result};
use crate::stats::{pava, BetaPosterior};
use crate::tally::DoseTally;

/// MTD choice when isotonic fits are equidistant from the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Tied fits below the target go to the higher dose, otherwise the lower.
    #[default]
    TowardTarget,
    Lower,
}

/// When the overdose rule is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum EliminationTiming {
    /// At each escalation decision, once the cohort is complete.
    #[default]
    Cohort,
    /// After every completed assessment.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BoinParams {
    pub phi: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    /// Posterior probability cutoff `C` of the overdose rule.
    pub elimination_cutoff: f64,
    /// Fewest evaluated patients at a dose before the overdose rule applies.
    pub min_n_eliminate: u32,
    pub n_stop: u32,
    pub tie_break: TieBreak,
    pub elimination: EliminationTiming,
}

impl BoinParams {
    /// Standard parameters for target `phi`: boundaries from
    /// [`boin_boundaries`], C = 0.95, elimination from 3 patients, n_stop = 9.
    pub fn new(phi: f64) -> Result<Self> {
        let (lambda_e, lambda_d) = boin_boundaries(phi)?;
        let p = Self {
            phi,
            lambda_e,
            lambda_d,
            elimination_cutoff: 0.95,
            min_n_eliminate: 3,
            n_stop: 9,
            tie_break: TieBreak::default(),
            elimination: EliminationTiming::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lambda_e && self.lambda_e < self.phi && self.phi < self.lambda_d && self.lambda_d < 1.0) {
            return Err(BardError::param(format!(
                "need 0 < lambda_e < phi < lambda_d < 1, got ({}, {}, {})",
                self.lambda_e, self.phi, self.lambda_d
            )));
        }
        if !(0.5 < self.elimination_cutoff && self.elimination_cutoff < 1.0) {
            return Err(BardError::param("elimination cutoff must lie in (0.5, 1)"));
        }
        Ok(())
    }

    /// Three-way classification of an observed DLT rate.
    pub fn signal(&self, rate: f64) -> Decision {
        if rate <= self.lambda_e {
            Decision::Escalate
        } else if rate > self.lambda_d {
            Decision::DeEscalate
        } else {
            Decision::Stay
        }
    }
}

/// Escalation and de-escalation boundaries for target `phi`, using the
/// default alternatives `phi1 = 0.6 phi` and `phi2 = 1.4 phi`.
pub fn boin_boundaries(phi: f64) -> Result<(f64, f64)> {
    if !(0.0 < phi && phi < 1.0 / 1.4) {
        return Err(BardError::param(format!("target {phi} outside (0, 1/1.4)")));
    }
    let phi1 = 0.6 * phi;
    let phi2 = 1.4 * phi;
    let lambda_e = ((1.0 - phi1) / (1.0 - phi)).ln() / (phi * (1.0 - phi1) / (phi1 * (1.0 - phi))).ln();
    let lambda_d = ((1.0 - phi) / (1.0 - phi2)).ln() / (phi2 * (1.0 - phi) / (phi * (1.0 - phi2))).ln();
    Ok((lambda_e, lambda_d))
}

/// Plain BOIN rule at the current dose `c`. Escalating past the top dose or
/// de-escalating below the lowest one resolves to `Stay`.
pub fn escalation_decision(tally: &DoseTally, c: usize, params: &BoinParams) -> Result<Decision> {
    let rate =
        tally.dose(c).dlt_rate().ok_or_else(|| BardError::Deferred(format!("no completed assessments at dose {}", c + 1)))?;
    Ok(match params.signal(rate) {
        Decision::Escalate if c + 1 == tally.len() => Decision::Stay,
        Decision::DeEscalate if c == 0 => Decision::Stay,
        d => d,
    })
}

/// Whether `y` DLTs in `n` evaluated patients trigger the overdose rule:
/// `Pr(p > phi | Beta(y + 1, n - y + 1)) > C`.
pub fn overdose_counts(y: u32, n: u32, params: &BoinParams) -> bool {
    n >= params.min_n_eliminate.max(1) && BetaPosterior::from_uniform_prior(y, n).sf(params.phi) > params.elimination_cutoff
}

/// Whether dose `j` triggers the overdose rule on its own data.
pub fn overdose_triggered(tally: &DoseTally, j: usize, params: &BoinParams) -> bool {
    let d = tally.dose(j);
    overdose_counts(d.dlt, d.evaluated, params)
}

/// Decision thresholds for `n` evaluated patients at a dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BoundaryRow {
    pub n: u32,
    /// Escalate when DLTs are at most this.
    pub escalate_max: u32,
    /// De-escalate when DLTs are at least this.
    pub deescalate_min: Option<u32>,
    /// Eliminate when DLTs are at least this.
    pub eliminate_min: Option<u32>,
}

/// Decision table for `n = 1..=max_n`.
pub fn decision_table(params: &BoinParams, max_n: u32) -> Vec<BoundaryRow> {
    (1..=max_n)
        .map(|n| {
            let rate = |y: u32| f64::from(y) / f64::from(n);
            BoundaryRow {
                n,
                escalate_max: (0..=n).take_while(|&y| rate(y) <= params.lambda_e).last().unwrap_or(0),
                deescalate_min: (0..=n).find(|&y| rate(y) > params.lambda_d),
                eliminate_min: (0..=n).find(|&y| overdose_counts(y, n, params)),
            }
        })
        .collect()
}

/// Elimination flags implied by the current data together with earlier
/// eliminations. Flags are upward closed.
pub fn eliminate_overdoses(tally: &DoseTally, params: &BoinParams) -> Vec<bool> {
    let lowest = (0..tally.len()).find(|&j| tally.is_eliminated(j) || overdose_triggered(tally, j, params));
    (0..tally.len()).map(|j| lowest.is_some_and(|l| j >= l)).collect()
}

/// Pooled DLT rate over doses `b_star..=j`.
pub fn pooled_rate(tally: &DoseTally, b_star: usize, j: usize) -> Result<f64> {
    if b_star > j || j >= tally.len() {
        return Err(BardError::param(format!("invalid pooling range {}..={}", b_star + 1, j + 1)));
    }
    let (y, n) = (b_star..=j).fold((0u32, 0u32), |(y, n), k| (y + tally.dose(k).dlt, n + tally.dose(k).evaluated));
    if n == 0 {
        return Err(BardError::Deferred(format!("no evaluated patients at doses {}..={}", b_star + 1, j + 1)));
    }
    Ok(f64::from(y) / f64::from(n))
}

fn severity(d: Decision) -> u8 {
    match d {
        Decision::Escalate => 0,
        Decision::Stay => 1,
        _ => 2,
    }
}

/// Lowest backfilled dose below `c` whose observed rate conflicts with the
/// current dose: its signal is stricter than the current dose's, or both
/// signal de-escalation.
pub fn find_conflict(tally: &DoseTally, c: usize, params: &BoinParams) -> Option<usize> {
    let current = params.signal(tally.dose(c).dlt_rate()?);
    (0..c).find(|&b| {
        let d = tally.dose(b);
        if d.backfilled == 0 {
            return false;
        }
        let Some(rate) = d.dlt_rate() else { return false };
        let s = params.signal(rate);
        severity(s) > severity(current) || (s == Decision::DeEscalate && current == Decision::DeEscalate)
    })
}

/// Decision with conflict reconciliation and its target dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ReconciledMove {
    pub decision: Decision,
    /// Target dose. `None` when the pooled data implicate every dose from
    /// the lowest conflicting one down, i.e. the rule points below dose 1.
    pub target: Option<usize>,
    /// Lowest conflicting backfilled dose, when reconciliation applied.
    pub conflict: Option<usize>,
}

/// BOIN decision at `c` reconciled against conflicting backfill data. With
/// no conflict this is [`escalation_decision`] with a one-level move.
pub fn reconciled_decision(tally: &DoseTally, c: usize, params: &BoinParams) -> Result<ReconciledMove> {
    let top = tally.len() - 1;
    let Some(b_star) = find_conflict(tally, c, params) else {
        let decision = escalation_decision(tally, c, params)?;
        let target = match decision {
            Decision::Escalate => c + 1,
            Decision::DeEscalate => c - 1,
            _ => c,
        };
        return Ok(ReconciledMove { decision, target: Some(target), conflict: None });
    };

    let q_c = pooled_rate(tally, b_star, c)?;
    let mv = if q_c <= params.lambda_e {
        if c == top {
            ReconciledMove { decision: Decision::Stay, target: Some(c), conflict: Some(b_star) }
        } else {
            ReconciledMove { decision: Decision::Escalate, target: Some(c + 1), conflict: Some(b_star) }
        }
    } else if q_c > params.lambda_d {
        let mut target = b_star.checked_sub(1);
        for j in (b_star..c).rev() {
            if pooled_rate(tally, b_star, j)? <= params.lambda_d {
                target = Some(j);
                break;
            }
        }
        ReconciledMove { decision: Decision::DeEscalate, target, conflict: Some(b_star) }
    } else {
        ReconciledMove { decision: Decision::Stay, target: Some(c), conflict: Some(b_star) }
    };
    Ok(mv)
}

/// Isotonic MTD: PAVA over non-eliminated doses with data, then the dose
/// whose fitted rate is closest to `phi` (lower dose on ties).
pub fn select_mtd_boin(tally: &DoseTally, params: &BoinParams) -> Option<usize> {
    let candidates: Vec<usize> = (0..tally.len()).filter(|&j| !tally.is_eliminated(j) && tally.dose(j).evaluated > 0).collect();
    if candidates.is_empty() {
        return None;
    }
    let rates: Vec<f64> = candidates.iter().map(|&j| tally.dose(j).dlt_rate().unwrap_or(0.0)).collect();
    let weights: Vec<f64> = candidates.iter().map(|&j| f64::from(tally.dose(j).evaluated)).collect();
    let fit = pava(&rates, &weights).ok()?;
    select_closest(&candidates, &fit, params.phi, params.tie_break)
}

fn select_closest(candidates: &[usize], fit: &[f64], phi: f64, tie: TieBreak) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&j, &f)) in candidates.iter().zip(fit).enumerate() {
        let f = match tie {
            // A rank-proportional nudge orders ties.
            TieBreak::TowardTarget => f + (k + 1) as f64 * 1e-10,
            TieBreak::Lower => f,
        };
        let dist = (f - phi).abs();
        if best.is_none_or(|(_, b)| dist < b - 1e-12) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}
