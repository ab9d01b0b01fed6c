//! Synthetic precipitation sequences: advecting Gaussian rain cells on a
//! torus with velocity jitter, amplitude drift, occasional dry episodes, and
//! rare impulse spikes that the Tukey refinement stage is meant to remove.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Generator parameters. The defaults produce 64x64 fields whose wet regions
/// sit well above a 2 mm/h threshold while dry episodes fall below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormParams {
    /// Number of Gaussian rain cells.
    pub cell_count: usize,
    /// Peak intensity range (mm/h), sampled per cell.
    pub amplitude: (f64, f64),
    /// Gaussian radius range (grid cells), sampled per cell.
    pub sigma: (f64, f64),
    /// Mean drift per step (grid cells), shared by all cells.
    pub velocity: (f64, f64),
    /// Uniform half-width of per-step velocity perturbations.
    pub jitter: f64,
    /// Per-step log-amplitude drift half-width.
    pub growth: f64,
    /// Chance per step of entering a dry episode.
    pub dry_period_prob: f64,
    /// Dry episode length range in steps.
    pub dry_period_len: (usize, usize),
    /// Intensity multiplier during dry episodes; small enough to pull every
    /// cell peak below the default 2 mm/h threshold.
    pub dry_attenuation: f64,
    /// Chance per grid cell per step of an impulse artifact.
    pub spike_prob: f64,
    /// Impulse artifact intensity range (mm/h).
    pub spike_amplitude: (f64, f64),
    /// Constant background intensity (mm/h).
    pub base_rate: f64,
    /// Soft ceiling (mm/h) on the combined rain intensity, applied as
    /// `cap * tanh(v / cap)` before spikes; infinite disables it. Overlapping
    /// cells sum, so this is what actually bounds the wet range.
    pub saturation: f64,
}

impl Default for StormParams {
    fn default() -> Self {
        StormParams {
            cell_count: 12,
            amplitude: (1.2, 3.2),
            sigma: (5.0, 10.0),
            velocity: (0.55, 0.30),
            jitter: 0.15,
            growth: 0.05,
            dry_period_prob: 0.02,
            dry_period_len: (6, 12),
            dry_attenuation: 0.03,
            spike_prob: 0.0008,
            spike_amplitude: (40.0, 90.0),
            base_rate: 0.0,
            saturation: 4.5,
        }
    }
}

impl StormParams {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("amplitude", self.amplitude),
            ("sigma", self.sigma),
            ("spike_amplitude", self.spike_amplitude),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || hi < lo {
                return Err(Error::invalid_param(
                    name,
                    format!("range must be finite with 0 <= lo <= hi, got ({lo}, {hi})"),
                ));
            }
        }
        if self.sigma.0 <= 0.0 && self.cell_count > 0 {
            return Err(Error::invalid_param("sigma", "must be positive"));
        }
        if !self.velocity.0.is_finite() || !self.velocity.1.is_finite() {
            return Err(Error::invalid_param("velocity", "must be finite"));
        }
        if self.saturation.is_nan() || self.saturation <= 0.0 {
            return Err(Error::invalid_param(
                "saturation",
                "must be positive (infinite disables the ceiling)",
            ));
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("growth", self.growth),
            ("dry_attenuation", self.dry_attenuation),
            ("base_rate", self.base_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_param(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        for (name, p) in [
            ("dry_period_prob", self.dry_period_prob),
            ("spike_prob", self.spike_prob),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid_param(
                    name,
                    format!("must be a probability, got {p}"),
                ));
            }
        }
        if self.dry_period_len.0 == 0 || self.dry_period_len.1 < self.dry_period_len.0 {
            return Err(Error::invalid_param(
                "dry_period_len",
                "range must satisfy 1 <= lo <= hi",
            ));
        }
        Ok(())
    }
}

struct RainCell {
    row: f64,
    col: f64,
    amplitude: f64,
    sigma: f64,
    drift_row: f64,
    drift_col: f64,
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Signed uniform draw in [-w, w].
fn jitter_in<R: Rng + ?Sized>(rng: &mut R, w: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * w
}

/// Shortest wrapped distance between coordinates on a ring of size `n`.
fn torus_dist(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).abs() % n;
    d.min(n - d)
}

/// Generate `steps` consecutive precipitation fields, deterministic in
/// `seed`. Cells advect with jittered velocity on a torus, amplitudes drift
/// multiplicatively, dry episodes attenuate the whole field, and impulse
/// spikes overwrite isolated grid cells.
pub fn generate_synthetic_sequence(
    height: usize,
    width: usize,
    steps: usize,
    params: &StormParams,
    seed: u64,
) -> Result<Vec<GridField>> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyGrid { height, width });
    }
    if steps == 0 {
        return Err(Error::invalid_param("steps", "must be positive"));
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let mut cells: Vec<RainCell> = (0..params.cell_count)
        .map(|_| RainCell {
            row: rng.gen::<f64>() * h,
            col: rng.gen::<f64>() * w,
            amplitude: uniform_in(&mut rng, params.amplitude),
            sigma: uniform_in(&mut rng, params.sigma),
            drift_row: params.velocity.0 + jitter_in(&mut rng, params.jitter),
            drift_col: params.velocity.1 + jitter_in(&mut rng, params.jitter),
        })
        .collect();

    let amp_ceiling = 3.0 * params.amplitude.1.max(1.0);
    let mut dry_remaining = 0usize;
    let mut fields = Vec::with_capacity(steps);
    for _ in 0..steps {
        if dry_remaining > 0 {
            dry_remaining -= 1;
        } else if params.dry_period_prob > 0.0 && rng.gen::<f64>() < params.dry_period_prob {
            dry_remaining =
                rng.gen_range(params.dry_period_len.0..=params.dry_period_len.1);
        }
        let attenuation = if dry_remaining > 0 {
            params.dry_attenuation
        } else {
            1.0
        };

        let mut values = vec![params.base_rate; height * width];
        for cell in &cells {
            let amp = cell.amplitude * attenuation;
            if amp <= 0.0 {
                continue;
            }
            let inv_two_sigma_sq = 1.0 / (2.0 * cell.sigma * cell.sigma);
            for row in 0..height {
                let dr = torus_dist(row as f64, cell.row, h);
                let row_term = dr * dr;
                let base = row * width;
                for col in 0..width {
                    let dc = torus_dist(col as f64, cell.col, w);
                    let d2 = row_term + dc * dc;
                    values[base + col] += amp * (-d2 * inv_two_sigma_sq).exp();
                }
            }
        }

        if params.saturation.is_finite() {
            let cap = params.saturation;
            for v in values.iter_mut() {
                *v = cap * (*v / cap).tanh();
            }
        }

        if params.spike_prob > 0.0 {
            for v in values.iter_mut() {
                if rng.gen::<f64>() < params.spike_prob {
                    *v = uniform_in(&mut rng, params.spike_amplitude);
                }
            }
        }

        fields.push(GridField::physical(height, width, values)?);

        for cell in cells.iter_mut() {
            cell.row = (cell.row + cell.drift_row + jitter_in(&mut rng, params.jitter))
                .rem_euclid(h);
            cell.col = (cell.col + cell.drift_col + jitter_in(&mut rng, params.jitter))
                .rem_euclid(w);
            if params.growth > 0.0 {
                cell.amplitude = (cell.amplitude
                    * jitter_in(&mut rng, params.growth).exp())
                .clamp(0.05, amp_ceiling);
            }
        }
    }
    Ok(fields)
}
