use serde::{Deserialize, Serialize};

use crate::error::{BardError, Result};

/// Per-dose counts accumulated during stage 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DoseRecord {
    /// Patients treated, including those still inside the assessment window.
    pub enrolled: u32,
    /// Patients whose DLT assessment is complete (`n_j`).
    pub evaluated: u32,
    /// DLTs among evaluated patients (`y_Tj`).
    pub dlt: u32,
    /// Observed efficacy responses among evaluated patients.
    pub responses: u32,
    /// Patients enrolled at this dose through backfill.
    pub backfilled: u32,
    pub eliminated: bool,
}

impl DoseRecord {
    /// Observed DLT rate, `None` without completed assessments.
    pub fn dlt_rate(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| f64::from(self.dlt) / f64::from(self.evaluated))
    }
}

/// Tally over the dose ladder. Dose indices are zero-based throughout the
/// crate; reports print them one-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct DoseTally {
    doses: Vec<DoseRecord>,
}

impl DoseTally {
    pub fn new(dose_count: usize) -> Self {
        Self { doses: vec![DoseRecord::default(); dose_count] }
    }

    /// Build a tally from `(dlt, evaluated)` pairs with everything evaluated.
    pub fn from_counts(counts: &[(u32, u32)]) -> Result<Self> {
        let mut tally = Self::new(counts.len());
        for (j, &(y, n)) in counts.iter().enumerate() {
            if y > n {
                return Err(BardError::Data(format!("dose {}: {y} DLTs out of {n}", j + 1)));
            }
            tally.doses[j] = DoseRecord { enrolled: n, evaluated: n, dlt: y, ..DoseRecord::default() };
        }
        Ok(tally)
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    pub fn dose(&self, j: usize) -> &DoseRecord {
        &self.doses[j]
    }

    #[cfg(test)]
    pub(crate) fn dose_mut(&mut self, j: usize) -> &mut DoseRecord {
        &mut self.doses[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DoseRecord> {
        self.doses.iter()
    }

    /// `(dlt, evaluated)` per dose.
    pub fn evaluated_counts(&self) -> Vec<(u32, u32)> {
        self.doses.iter().map(|d| (d.dlt, d.evaluated)).collect()
    }

    /// Mark `j` and every higher dose as eliminated.
    pub fn eliminate_from(&mut self, j: usize) {
        for d in &mut self.doses[j..] {
            d.eliminated = true;
        }
    }

    pub fn lowest_eliminated(&self) -> Option<usize> {
        self.doses.iter().position(|d| d.eliminated)
    }

    pub fn is_eliminated(&self, j: usize) -> bool {
        self.doses[j].eliminated
    }

    pub fn total_enrolled(&self) -> u32 {
        self.doses.iter().map(|d| d.enrolled).sum()
    }

    pub fn enroll(&mut self, j: usize, backfill: bool) {
        let d = &mut self.doses[j];
        d.enrolled += 1;
        if backfill {
            d.backfilled += 1;
        }
    }

    pub fn record(&mut self, j: usize, dlt: bool, response: bool) -> Result<()> {
        let d = &mut self.doses[j];
        if d.evaluated >= d.enrolled {
            return Err(BardError::Data(format!("dose {} has no pending assessment", j + 1)));
        }
        d.evaluated += 1;
        d.dlt += u32::from(dlt);
        d.responses += u32::from(response);
        Ok(())
    }

    /// An efficacy response observed after the DLT assessment was recorded.
    pub fn record_late_response(&mut self, j: usize) {
        self.doses[j].responses += 1;
    }
}
