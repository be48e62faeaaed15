//! Two-parameter logistic dose-toxicity model,
//! `logit(p_j) = log(alpha) + beta * x_j`, with independent normal priors on
//! `log(alpha)` and `log(beta)`. The posterior is evaluated by tensor-product
//! quadrature on a fixed grid over (log alpha, log beta).
//!
//! Interval probabilities integrate the log-alpha axis with a fractional
//! cell rule: for a fixed log-beta row, `p_j > c` is the half-line
//! `log alpha > logit(c) - beta * x_j`, and the cell straddling the threshold
//! contributes the matching fraction of its mass.

use serde::{Deserialize, Serialize};

use super::{logit, softplus};
use crate::error::{BardError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BlrmPrior {
    pub mu_alpha: f64,
    pub mu_beta: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

impl BlrmPrior {
    pub fn new(mu_alpha: f64, mu_beta: f64, sigma_alpha: f64, sigma_beta: f64) -> Result<Self> {
        let p = Self { mu_alpha, mu_beta, sigma_alpha, sigma_beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_alpha > 0.0 && self.sigma_beta > 0.0) {
            return Err(BardError::param("BLRM prior standard deviations must be positive"));
        }
        if !(self.mu_alpha.is_finite() && self.mu_beta.is_finite()) {
            return Err(BardError::param("BLRM prior means must be finite"));
        }
        Ok(())
    }
}

impl Default for BlrmPrior {
    /// Weakly-informative prior: log(alpha) ~ N(-1.1, 2^2), log(beta) ~ N(0, 1).
    fn default() -> Self {
        Self { mu_alpha: -1.1, mu_beta: 0.0, sigma_alpha: 2.0, sigma_beta: 1.0 }
    }
}

/// How dosages enter the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum DoseScale {
    /// `x_j = log(d_j / d*)`
    #[default]
    LogRatio,
    /// `x_j = d_j / d*`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis.
    pub nodes: usize,
    /// Half-width of each axis in prior standard deviations.
    pub half_width_sd: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nodes: 201, half_width_sd: 6.0 }
    }
}

/// Posterior masses of the underdose, target and overdose intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct IntervalProbs {
    pub underdose: f64,
    pub target: f64,
    pub overdose: f64,
}

/// Precomputed quadrature grid for one set of dosages. Immutable once built,
/// so a single model is shared by every replication of a simulation.
#[derive(Debug, Clone)]
pub struct BlrmModel {
    prior: BlrmPrior,
    dosages: Vec<f64>,
    ref_dosage: f64,
    covariate: Vec<f64>,
    n: usize,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    beta: Vec<f64>,
    h_alpha: f64,
    log_prior: Vec<f64>,
    /// Per dose, per node: log p and log(1 - p). Node index is `row * n + col`
    /// with rows along log beta and columns along log alpha.
    log_p: Vec<Vec<f64>>,
    log_q: Vec<Vec<f64>>,
}

impl BlrmModel {
    pub fn new(prior: BlrmPrior, dosages: &[f64], ref_dosage: f64, scale: DoseScale, grid: GridSpec) -> Result<Self> {
        prior.validate()?;
        if dosages.is_empty() {
            return Err(BardError::param("BLRM needs at least one dosage"));
        }
        if dosages.iter().any(|d| !(d.is_finite() && *d > 0.0)) || !(ref_dosage.is_finite() && ref_dosage > 0.0) {
            return Err(BardError::param("dosages must be positive"));
        }
        if dosages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BardError::param("dosages must be strictly increasing"));
        }
        if grid.nodes < 3 || grid.half_width_sd <= 0.0 {
            return Err(BardError::param("grid needs >= 3 nodes and a positive width"));
        }
        let n = grid.nodes;
        let axis = |mu: f64, sd: f64| -> Vec<f64> {
            let lo = mu - grid.half_width_sd * sd;
            let step = 2.0 * grid.half_width_sd * sd / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        };
        let log_alpha = axis(prior.mu_alpha, prior.sigma_alpha);
        let log_beta = axis(prior.mu_beta, prior.sigma_beta);
        let beta: Vec<f64> = log_beta.iter().map(|b| b.exp()).collect();
        let h_alpha = log_alpha[1] - log_alpha[0];

        let covariate: Vec<f64> = dosages
            .iter()
            .map(|d| match scale {
                DoseScale::LogRatio => (d / ref_dosage).ln(),
                DoseScale::Linear => d / ref_dosage,
            })
            .collect();

        let mut log_prior = Vec::with_capacity(n * n);
        for lb in &log_beta {
            let zb = (lb - prior.mu_beta) / prior.sigma_beta;
            for la in &log_alpha {
                let za = (la - prior.mu_alpha) / prior.sigma_alpha;
                log_prior.push(-0.5 * (za * za + zb * zb));
            }
        }

        let mut log_p = Vec::with_capacity(dosages.len());
        let mut log_q = Vec::with_capacity(dosages.len());
        for &x in &covariate {
            let mut lp = Vec::with_capacity(n * n);
            let mut lq = Vec::with_capacity(n * n);
            for b in &beta {
                for la in &log_alpha {
                    let eta = la + b * x;
                    lp.push(-softplus(-eta));
                    lq.push(-softplus(eta));
                }
            }
            log_p.push(lp);
            log_q.push(lq);
        }

        Ok(Self {
            prior,
            dosages: dosages.to_vec(),
            ref_dosage,
            covariate,
            n,
            log_alpha,
            log_beta,
            beta,
            h_alpha,
            log_prior,
            log_p,
            log_q,
        })
    }

    pub fn dose_count(&self) -> usize {
        self.dosages.len()
    }

    pub fn dosages(&self) -> &[f64] {
        &self.dosages
    }

    pub fn ref_dosage(&self) -> f64 {
        self.ref_dosage
    }

    pub fn prior(&self) -> &BlrmPrior {
        &self.prior
    }

    /// Grid node coordinates along (log alpha, log beta).
    pub fn axes(&self) -> (&[f64], &[f64]) {
        (&self.log_alpha, &self.log_beta)
    }

    /// Posterior given per-dose `(dlt, evaluated)` counts, one entry per dose.
    pub fn posterior(&self, data: &[(u32, u32)]) -> Result<BlrmPosteriorGrid<'_>> {
        if data.len() != self.dose_count() {
            return Err(BardError::param(format!("expected data for {} doses, got {}", self.dose_count(), data.len())));
        }
        if let Some((y, m)) = data.iter().find(|(y, m)| y > m) {
            return Err(BardError::param(format!("dlt count {y} exceeds evaluated count {m}")));
        }

        let mut lw = self.log_prior.clone();
        for (j, &(y, m)) in data.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let (yf, ff) = (f64::from(y), f64::from(m - y));
            for ((w, lp), lq) in lw.iter_mut().zip(&self.log_p[j]).zip(&self.log_q[j]) {
                *w += yf * lp + ff * lq;
            }
        }
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for w in lw.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        for w in lw.iter_mut() {
            *w /= total;
        }

        let n = self.n;
        let mut suffix = vec![0.0; n * (n + 1)];
        for r in 0..n {
            let row = &lw[r * n..(r + 1) * n];
            let s = &mut suffix[r * (n + 1)..(r + 1) * (n + 1)];
            for i in (0..n).rev() {
                s[i] = s[i + 1] + row[i];
            }
        }
        Ok(BlrmPosteriorGrid { model: self, weights: lw, suffix })
    }
}

/// Normalized posterior weights on the model grid.
#[derive(Debug, Clone)]
pub struct BlrmPosteriorGrid<'a> {
    model: &'a BlrmModel,
    weights: Vec<f64>,
    suffix: Vec<f64>,
}

impl BlrmPosteriorGrid<'_> {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn model(&self) -> &BlrmModel {
        self.model
    }

    /// Pr(p_j > cutoff | data).
    pub fn prob_tox_above(&self, dose: usize, cutoff: f64) -> Result<f64> {
        self.check_dose(dose)?;
        if cutoff <= 0.0 {
            return Ok(1.0);
        }
        if cutoff >= 1.0 {
            return Ok(0.0);
        }
        let m = self.model;
        let n = m.n;
        let g = logit(cutoff);
        let x = m.covariate[dose];
        let left = m.log_alpha[0] - 0.5 * m.h_alpha;
        let mut mass = 0.0;
        for r in 0..n {
            let s = &self.suffix[r * (n + 1)..(r + 1) * (n + 1)];
            let t = g - m.beta[r] * x;
            let pos = (t - left) / m.h_alpha;
            if pos <= 0.0 {
                mass += s[0];
            } else if pos < n as f64 {
                let i = pos.floor() as usize;
                let frac = pos - i as f64;
                mass += s[i + 1] + self.weights[r * n + i] * (1.0 - frac);
            }
        }
        Ok(mass.clamp(0.0, 1.0))
    }

    /// PTT/POD style partition for `(gamma1, gamma2)`.
    pub fn interval_probs(&self, dose: usize, gamma1: f64, gamma2: f64) -> Result<IntervalProbs> {
        if !(0.0 < gamma1 && gamma1 < gamma2 && gamma2 < 1.0) {
            return Err(BardError::param(format!("need 0 < gamma1 < gamma2 < 1, got ({gamma1}, {gamma2})")));
        }
        let above1 = self.prob_tox_above(dose, gamma1)?;
        let overdose = self.prob_tox_above(dose, gamma2)?.min(above1);
        Ok(IntervalProbs { underdose: 1.0 - above1, target: above1 - overdose, overdose })
    }

    /// Posterior mean of p_j.
    pub fn mean_tox(&self, dose: usize) -> Result<f64> {
        self.check_dose(dose)?;
        Ok(self.weights.iter().zip(&self.model.log_p[dose]).map(|(w, lp)| w * lp.exp()).sum())
    }

    fn check_dose(&self, dose: usize) -> Result<()> {
        if dose >= self.model.dose_count() {
            return Err(BardError::param(format!("dose index {dose} out of range")));
        }
        Ok(())
    }
}
