//! Tukey-fence outlier refinement: cells outside `[Q1 - k*IQR, Q3 + k*IQR]`
//! are replaced by the mean of their non-outlier 8-neighbors, falling back to
//! the global non-outlier mean for isolated clusters. Refinement repeats on
//! its own output until no cell is flagged, so the result is a fixpoint.

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Conventional Tukey fence multiplier.
pub const DEFAULT_FENCE_MULTIPLIER: f64 = 1.5;

/// Recomputing fences on already-refined data can flag new cells as the
/// spread shrinks; the cascade converges quickly in practice and this bound
/// only guards against pathological oscillation.
const MAX_PASSES: usize = 64;

/// Linear-interpolation quantile (the R-7 rule) over sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Tukey fences `(Q1 - k*IQR, Q3 + k*IQR)` of the field's value distribution.
pub fn tukey_fences(field: &GridField, k: f64) -> Result<(f64, f64)> {
    if !k.is_finite() || k <= 0.0 {
        return Err(Error::invalid_param(
            "fence multiplier",
            format!("must be finite and > 0, got {k}"),
        ));
    }
    let mut sorted = field.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - k * iqr, q3 + k * iqr))
}

/// One replacement pass against fixed fences. Returns the number of cells
/// replaced; replacement values are means of non-outlier cells only, so they
/// always lie inside the fences.
fn replace_pass(values: &mut [f64], height: usize, width: usize, lo: f64, hi: f64) -> usize {
    let outlier: Vec<bool> = values.iter().map(|v| *v < lo || *v > hi).collect();
    let flagged = outlier.iter().filter(|o| **o).count();
    if flagged == 0 {
        return 0;
    }

    let mut inlier_sum = 0.0;
    let mut inlier_count = 0usize;
    for (v, out) in values.iter().zip(&outlier) {
        if !out {
            inlier_sum += v;
            inlier_count += 1;
        }
    }
    // Fences always contain the quartiles, so at least half the cells remain.
    debug_assert!(inlier_count > 0);
    let global_mean = inlier_sum / inlier_count as f64;

    let snapshot = values.to_vec();
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            if !outlier[idx] {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let nr = row as i64 + dr;
                    let nc = col as i64 + dc;
                    if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                        continue;
                    }
                    let nidx = nr as usize * width + nc as usize;
                    if !outlier[nidx] {
                        sum += snapshot[nidx];
                        count += 1;
                    }
                }
            }
            values[idx] = if count > 0 {
                sum / count as f64
            } else {
                global_mean
            };
        }
    }
    flagged
}

/// Replace every Tukey outlier with its non-outlier neighborhood mean,
/// iterating until the output contains no outlier under its own fences. A
/// constant field has zero IQR with all values on the fences, so it passes
/// through unchanged; no output value ever leaves the input's fences.
pub fn tukey_refine(field: &GridField, k: f64) -> Result<GridField> {
    let mut values = field.values().to_vec();
    for _ in 0..MAX_PASSES {
        let current = GridField::new(field.height(), field.width(), values.clone())?;
        let (lo, hi) = tukey_fences(&current, k)?;
        if replace_pass(&mut values, field.height(), field.width(), lo, hi) == 0 {
            break;
        }
    }
    GridField::new(field.height(), field.width(), values)
}
