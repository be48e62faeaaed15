//! Stage-2 dose pair, enrollment quota and the end-of-trial OBD call.

use serde::{Deserialize, Serialize};

use crate::config::{DesignConfig, Stage2Mode};
use crate::error::{BardError, Result};
use crate::minimization::{seed_from_stage1, stage2_quota, Arm, ArmCounts, CovariateSpec, SeedPatient};
use crate::obd::{admissible_pair, select_obd_margin, select_obd_utility, Admissibility, ArmData};
use crate::stats::dirichlet_mean_utility;
use crate::stats::DirichletPosterior;

/// Stage-2 doses. `low` is absent when the MTD is the lowest dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Stage2Doses {
    pub low: Option<usize>,
    pub high: usize,
}

impl Stage2Doses {
    /// The MTD and the dose one level below, if it exists.
    pub fn from_mtd(mtd: usize) -> Self {
        Self { low: mtd.checked_sub(1), high: mtd }
    }

    pub fn is_single(&self) -> bool {
        self.low.is_none()
    }

    pub fn dose(&self, arm: Arm) -> usize {
        match arm {
            Arm::Low => self.low.unwrap_or(self.high),
            Arm::High => self.high,
        }
    }

    /// Arm treated at dose `j`, if any.
    pub fn arm_of(&self, j: usize) -> Option<Arm> {
        if j == self.high {
            Some(Arm::High)
        } else if Some(j) == self.low {
            Some(Arm::Low)
        } else {
            None
        }
    }

    pub fn contains(&self, j: usize) -> bool {
        self.arm_of(j).is_some()
    }
}

/// A stage-1 patient as seen by stage 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Stage1Patient {
    pub dose: usize,
    /// Levels of the balanced covariates.
    pub levels: Vec<usize>,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Stage2Plan {
    pub doses: Stage2Doses,
    pub mode: Stage2Mode,
    /// Eligible stage-1 patients carried into each arm.
    pub n1_low: u32,
    pub n1_high: u32,
    /// New patients to enroll.
    pub quota: u32,
    /// Minimization seed counts.
    pub counts: ArmCounts,
}

/// Plan stage 2 from stage-1 patients.
pub fn plan_stage2(design: &DesignConfig, doses: Stage2Doses, stage1: &[Stage1Patient]) -> Result<Stage2Plan> {
    if doses.high >= design.n_doses || doses.low.is_some_and(|l| l >= doses.high) {
        return Err(BardError::param(format!("invalid stage-2 doses {doses:?}")));
    }
    let spec: CovariateSpec = design.covariate_spec();
    let seeds: Vec<SeedPatient> = stage1
        .iter()
        .filter_map(|p| {
            doses.arm_of(p.dose).map(|arm| SeedPatient {
                arm,
                covariates: p.levels.iter().map(|&l| Some(l)).collect(),
                eligible: p.eligible,
            })
        })
        .collect();
    let seeded = seed_from_stage1(&spec, &seeds)?;
    let (n1_low, n1_high) = (seeded.total(Arm::Low), seeded.total(Arm::High));
    // A lone arm gets the per-arm share of the stage-2 target.
    let target = if doses.is_single() { design.n2 / 2 } else { design.n2 };
    let (quota, counts) = match design.stage2 {
        Stage2Mode::Conditional => (stage2_quota(target, n1_low, n1_high), seeded),
        Stage2Mode::SimpleRandom | Stage2Mode::PocockSimonFull => (target, ArmCounts::empty(&spec)),
    };
    Ok(Stage2Plan { doses, mode: design.stage2, n1_low, n1_high, quota, counts })
}

/// Both OBD calls with the quantities behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ObdOutcome {
    pub margin: Option<usize>,
    pub utility: Option<usize>,
    /// (low, high); the low entry is inadmissible for a single-dose stage 2.
    pub admissibility: [Admissibility; 2],
    pub efficacy: [Option<f64>; 2],
    pub posterior_utility: [f64; 2],
    pub data: [ArmData; 2],
}

/// OBD selection from the analysis data of each arm.
pub fn evaluate_obd(design: &DesignConfig, doses: Stage2Doses, low: ArmData, high: ArmData) -> Result<ObdOutcome> {
    let mut adm = admissible_pair(&low, &high, &design.gating);
    if doses.is_single() {
        adm[0].safe = false;
        adm[0].effective = false;
    }
    let ok = [adm[0].ok(), adm[1].ok()];
    let pe = [low.efficacy_rate(), high.efficacy_rate()];
    let margin = select_obd_margin(pe[0].unwrap_or(0.0), pe[1].unwrap_or(0.0), &design.gating, ok);
    let utility = select_obd_utility(low.outcomes, high.outcomes, &design.utility, design.dirichlet_prior, ok)?;
    let pu = |d: &ArmData| -> Result<f64> {
        Ok(dirichlet_mean_utility(&DirichletPosterior::update(design.dirichlet_prior, d.outcomes)?, &design.utility.0))
    };
    Ok(ObdOutcome {
        margin: margin.map(|a| doses.dose(a)),
        utility: utility.map(|a| doses.dose(a)),
        admissibility: adm,
        efficacy: pe,
        posterior_utility: [pu(&low)?, pu(&high)?],
        data: [low, high],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(dose: usize, levels: [usize; 2]) -> Stage1Patient {
        Stage1Patient { dose, levels: levels.to_vec(), eligible: true }
    }

    #[test]
    fn plan_seeds_and_quota() {
        let d = DesignConfig::default();
        let mut pts: Vec<_> = (0..6).map(|i| patient(1, [i % 2, 0])).collect();
        pts.extend((0..10).map(|i| patient(2, [1, i % 2])));
        pts.push(patient(0, [0, 0]));
        let plan = plan_stage2(&d, Stage2Doses::from_mtd(2), &pts).unwrap();
        assert_eq!((plan.n1_low, plan.n1_high, plan.quota), (6, 10, 24));
        assert_eq!(plan.counts.count(Arm::High, 0, 1), 10);

        let sr = crate::config::comparator_design(&d, crate::config::Comparator::Sr);
        let plan = plan_stage2(&sr, Stage2Doses::from_mtd(2), &pts).unwrap();
        assert_eq!(plan.quota, 40);
        assert_eq!(plan.counts.total(Arm::High), 0);
    }

    #[test]
    fn single_dose_plan() {
        let d = DesignConfig::default();
        let pts: Vec<_> = (0..9).map(|_| patient(0, [0, 0])).collect();
        let doses = Stage2Doses::from_mtd(0);
        assert!(doses.is_single());
        let plan = plan_stage2(&d, doses, &pts).unwrap();
        assert_eq!((plan.n1_low, plan.n1_high, plan.quota), (0, 9, 11));
    }

    #[test]
    fn obd_single_dose_reduces_to_gate() {
        let d = DesignConfig::default();
        let mut high = ArmData::default();
        for i in 0..20 {
            high.add(i < 2, i < 8);
        }
        let out = evaluate_obd(&d, Stage2Doses::from_mtd(0), ArmData::default(), high).unwrap();
        assert_eq!((out.margin, out.utility), (Some(0), Some(0)));
        let mut bad = ArmData::default();
        for i in 0..20 {
            bad.add(i < 12, i < 8);
        }
        let out = evaluate_obd(&d, Stage2Doses::from_mtd(0), ArmData::default(), bad).unwrap();
        assert_eq!((out.margin, out.utility), (None, None));
    }

    #[test]
    fn obd_two_arms() {
        let d = DesignConfig::default();
        let (mut low, mut high) = (ArmData::default(), ArmData::default());
        for i in 0..20 {
            low.add(i < 2, i < 8);
            high.add(i < 4, i < 9);
        }
        let out = evaluate_obd(&d, Stage2Doses::from_mtd(3), low, high).unwrap();
        // 0.40 vs 0.45 is within the margin.
        assert_eq!(out.margin, Some(2));
        assert!(out.posterior_utility.iter().all(|u| u.is_finite()));
    }
}
