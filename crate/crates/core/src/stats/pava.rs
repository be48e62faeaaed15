use crate::error::{BardError, Result};

/// Weighted isotonic (nondecreasing) least-squares fit by pool-adjacent-violators.
///
/// Zero-weight entries take the pooled value of the nearest positive-weight
/// block to their left (to their right when none exists). If every weight is
/// zero the entries are treated as equally weighted.
pub fn pava(rates: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if rates.is_empty() {
        return Err(BardError::param("pava needs at least one value"));
    }
    if rates.len() != weights.len() {
        return Err(BardError::param(format!("pava length mismatch: {} rates, {} weights", rates.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || rates.iter().any(|r| !r.is_finite()) {
        return Err(BardError::param("pava needs finite values and nonnegative weights"));
    }

    let all_zero = weights.iter().all(|w| *w == 0.0);
    let active: Vec<usize> = (0..rates.len()).filter(|&i| all_zero || weights[i] > 0.0).collect();

    // Blocks of (pooled value, pooled weight, member count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(active.len());
    for &i in &active {
        let w = if all_zero { 1.0 } else { weights[i] };
        let mut block = (rates[i], w, 1usize);
        while let Some(&(v, pw, cnt)) = blocks.last() {
            if v <= block.0 {
                break;
            }
            blocks.pop();
            let tw = pw + block.1;
            block = ((v * pw + block.0 * block.1) / tw, tw, cnt + block.2);
        }
        blocks.push(block);
    }

    let mut active_fit = Vec::with_capacity(active.len());
    for (v, _, cnt) in blocks {
        active_fit.extend(std::iter::repeat_n(v, cnt));
    }

    let mut out = vec![f64::NAN; rates.len()];
    for (k, &i) in active.iter().enumerate() {
        out[i] = active_fit[k];
    }
    let first = active_fit[0];
    let mut carry = None;
    for v in out.iter_mut() {
        if v.is_nan() {
            *v = carry.unwrap_or(first);
        } else {
            carry = Some(*v);
        }
    }
    Ok(out)
}
