use serde::{Deserialize, Serialize};

use crate::error::{BardError, Result};

/// Dirichlet posterior over the four joint toxicity/efficacy outcomes, ordered
/// (tox, no-eff), (no-tox, no-eff), (tox, eff), (no-tox, eff).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DirichletPosterior {
    pub alpha: [f64; 4],
}

impl DirichletPosterior {
    pub fn new(alpha: [f64; 4]) -> Result<Self> {
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(BardError::param(format!("dirichlet parameters must be positive: {alpha:?}")));
        }
        Ok(Self { alpha })
    }

    /// Conjugate update of a prior with outcome counts.
    pub fn update(prior: [f64; 4], counts: [u32; 4]) -> Result<Self> {
        let mut alpha = prior;
        for (a, n) in alpha.iter_mut().zip(counts) {
            *a += f64::from(n);
        }
        Self::new(alpha)
    }

    pub fn mean(&self) -> [f64; 4] {
        let total: f64 = self.alpha.iter().sum();
        self.alpha.map(|a| a / total)
    }
}

/// Posterior mean utility `sum_k u_k * alpha_k / sum(alpha)`.
pub fn dirichlet_mean_utility(post: &DirichletPosterior, utilities: &[f64; 4]) -> f64 {
    post.mean().iter().zip(utilities).map(|(p, u)| p * u).sum()
}
